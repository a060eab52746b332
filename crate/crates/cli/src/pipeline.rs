//! Sequential design pipeline: geometry optimization, transducer placement,
//! decoupled plant construction, and per-channel loop shaping. Stages are
//! tagged so a failure maps to a distinct exit code, and artifacts are
//! written as soon as the producing stage completes.

use std::fmt;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use codesign_core::control::{maximize_bandwidth, synthesis_grid, ControllerParams};
use codesign_core::fem::{modal_model, Direction, ModalModel, StageParams};
use codesign_core::geometry::{optimize_geometry, FrequencySpec};
use codesign_core::placement::{
    controllability_grammian, input_matrix, observability_grammian, optimize_placement,
    output_matrix, placement_objective, DeviceKind, DevicePattern, PatternLayout,
};
use codesign_core::plant::{build_plant, channel_coefficients, DecouplingPair, ModalStateSpace};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::artifacts;
use crate::config::{Config, LoadedConfig, RunMode};

/// Scaled-constraint slack below which a returned design counts as meeting
/// the frequency window; the raw violation is always reported.
pub const FEASIBILITY_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Geometry,
    Placement,
    Plant,
    Control,
    Io,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Geometry => 3,
            Stage::Placement => 4,
            Stage::Plant => 5,
            Stage::Control => 6,
            Stage::Io => 7,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Geometry => "geometry",
            Stage::Placement => "placement",
            Stage::Plant => "plant",
            Stage::Control => "control",
            Stage::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage.tag(), self.message)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = Result<T, StageError>;

fn stage_err<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PipelineOptions {
    pub resolution: Option<usize>,
    pub quiet: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DesignReport {
    pub schema_version: u32,
    pub mode: String,
    pub config_sha256: String,
    /// Wall-clock fields sit on their own lines in the pretty JSON so a
    /// determinism diff can strip exactly these.
    pub timestamp_utc: String,
    pub runtime_s: f64,
    pub resolution: usize,
    pub geometry: GeometryReport,
    pub placement: PlacementReport,
    pub channels: Vec<ChannelReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GeometryReport {
    pub base_thickness_mm: f64,
    pub rib_height_mm: f64,
    pub rib_width_mm: f64,
    pub rib_pitch_mm: f64,
    pub frame_width_mm: f64,
    pub mass_kg: f64,
    /// Constrained flexible frequencies at the returned design.
    pub frequencies_hz: Vec<f64>,
    pub feasible: bool,
    pub max_violation: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlacementReport {
    pub sensor_point_mm: [f64; 2],
    pub objective: f64,
    pub per_mode_observability: Vec<f64>,
    pub per_mode_controllability: Vec<f64>,
    pub measurement_condition: f64,
    pub actuation_condition: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelReport {
    pub label: String,
    pub bandwidth_hz: f64,
    pub max_sensitivity: f64,
    pub gain_margin_db: Option<f64>,
    pub phase_margin_deg: f64,
    pub stable: bool,
    pub controller: ControllerParams,
}

/// Everything the geometry, placement, and plant stages produce; synthesis
/// and artifact emission consume this.
pub struct SolvedDesign {
    pub params: StageParams,
    pub history: Vec<codesign_core::cobyla::HistoryEntry>,
    pub evaluations: usize,
    pub converged: bool,
    pub max_violation: f64,
    pub feasible: bool,
    pub model: ModalModel,
    pub frequencies_hz: Vec<f64>,
    pub sensor_point: [f64; 2],
    pub placement_value: f64,
    pub per_mode_observability: Vec<f64>,
    pub per_mode_controllability: Vec<f64>,
    pub pair: DecouplingPair,
    pub plant: ModalStateSpace,
}

fn actuator_pattern(cfg: &Config) -> DevicePattern {
    let centers: Vec<[f64; 2]> = cfg.attachments().iter().map(|a| a.center).collect();
    let n = centers.len();
    DevicePattern {
        kind: DeviceKind::Actuator,
        layout: PatternLayout::Offsets(centers),
        directions: vec![
            vec![
                Direction::InPlaneX,
                Direction::InPlaneY,
                Direction::OutOfPlane,
            ];
            n
        ],
    }
}

fn vertical_sensor_pattern(cfg: &Config, mode: RunMode) -> DevicePattern {
    match mode {
        // Four sensors at the 90 degree images of one optimized point.
        RunMode::Proposed => {
            let c = 0.5 * cfg.stage_edge();
            DevicePattern {
                kind: DeviceKind::Sensor,
                layout: PatternLayout::FourFoldRotation { center: [c, c] },
                directions: vec![vec![Direction::OutOfPlane]; 4],
            }
        }
        // Default placement: one vertical sensor per magnet center.
        RunMode::Baseline => {
            let centers: Vec<[f64; 2]> = cfg.attachments().iter().map(|a| a.center).collect();
            let n = centers.len();
            DevicePattern {
                kind: DeviceKind::Sensor,
                layout: PatternLayout::Offsets(centers),
                directions: vec![vec![Direction::OutOfPlane]; n],
            }
        }
    }
}

fn lateral_sensor_pattern(cfg: &Config) -> Option<DevicePattern> {
    if cfg.lateral_sensors.is_empty() {
        return None;
    }
    let mm = 1e-3;
    let positions: Vec<[f64; 2]> = cfg
        .lateral_sensors
        .iter()
        .map(|s| [s.position_mm[0] * mm, s.position_mm[1] * mm])
        .collect();
    let directions = cfg
        .lateral_sensors
        .iter()
        .map(|s| {
            vec![if s.axis == "x" {
                Direction::InPlaneX
            } else {
                Direction::InPlaneY
            }]
        })
        .collect();
    Some(DevicePattern {
        kind: DeviceKind::Sensor,
        layout: PatternLayout::Offsets(positions),
        directions,
    })
}

fn stack_rows(top: DMatrix<f64>, bottom: Option<DMatrix<f64>>) -> DMatrix<f64> {
    match bottom {
        None => top,
        Some(b) => {
            let mut out = DMatrix::zeros(top.nrows() + b.nrows(), top.ncols());
            out.view_mut((0, 0), (top.nrows(), top.ncols())).copy_from(&top);
            out.view_mut((top.nrows(), 0), (b.nrows(), b.ncols()))
                .copy_from(&b);
            out
        }
    }
}

fn progress(quiet: bool, msg: &str) {
    if !quiet {
        println!("{msg}");
    }
}

/// Geometry, placement, and plant stages for one run mode.
pub fn solve_design(
    cfg: &Config,
    mode: RunMode,
    spec: &FrequencySpec,
    opts: &PipelineOptions,
) -> StageResult<SolvedDesign> {
    let ctx = cfg.design_context(opts.resolution);
    let bounds = cfg.bounds(mode).map_err(stage_err(Stage::Config))?;
    let initial = cfg.initial(mode).map_err(stage_err(Stage::Config))?;
    let settings = cfg.cobyla_settings();

    let result = optimize_geometry(&initial, &bounds, spec, &ctx, &settings)
        .map_err(stage_err(Stage::Geometry))?;
    let params = StageParams::from_slice(&result.best_point).map_err(stage_err(Stage::Geometry))?;
    let max_violation = result
        .constraint_values
        .iter()
        .fold(0.0f64, |acc, c| acc.max(-c));
    let feasible = max_violation <= FEASIBILITY_TOL;

    // One final solve at the returned design feeds placement, the plant,
    // and the recomputed report values.
    let model = modal_model(
        &params,
        ctx.stage_edge,
        ctx.resolution,
        &ctx.material,
        &ctx.attachments,
        ctx.n_modes,
        ctx.damping_ratio,
    )
    .map_err(stage_err(Stage::Geometry))?;
    let frequencies_hz: Vec<f64> = model.flexible_frequencies()[..spec.m_total]
        .iter()
        .map(|w| w / std::f64::consts::TAU)
        .collect();
    progress(
        opts.quiet,
        &format!(
            "[geometry] {} mass {:.4} kg, constrained modes {:?} Hz, {} ({} evaluations)",
            mode.as_str(),
            model.total_mass,
            frequencies_hz
                .iter()
                .map(|f| (f * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
            if feasible {
                "feasible".to_string()
            } else {
                format!("infeasible (max scaled violation {max_violation:.3e})")
            },
            result.evaluations_used,
        ),
    );

    let vertical = vertical_sensor_pattern(cfg, mode);
    let (sensor_point, placement_value) = match mode {
        RunMode::Proposed => {
            let (theta, report) = optimize_placement(
                &model,
                &vertical,
                &cfg.placement_domain(),
                spec,
                cfg.placement.gamma,
            )
            .map_err(stage_err(Stage::Placement))?;
            (theta, report.objective_value)
        }
        RunMode::Baseline => {
            let value = placement_objective(&model, &vertical, [0.0, 0.0], spec, cfg.placement.gamma)
                .map_err(stage_err(Stage::Placement))?;
            ([0.0, 0.0], value)
        }
    };
    progress(
        opts.quiet,
        &format!(
            "[placement] {} sensor point [{:.1}, {:.1}] mm, objective {:.4e}",
            mode.as_str(),
            sensor_point[0] * 1e3,
            sensor_point[1] * 1e3,
            placement_value
        ),
    );

    let c_vertical =
        output_matrix(&model, &vertical, sensor_point).map_err(stage_err(Stage::Plant))?;
    let c_lateral = match lateral_sensor_pattern(cfg) {
        Some(p) => Some(output_matrix(&model, &p, [0.0, 0.0]).map_err(stage_err(Stage::Plant))?),
        None => None,
    };
    let c_s = stack_rows(c_vertical, c_lateral);
    let b_a = input_matrix(&model, &actuator_pattern(cfg), [0.0, 0.0])
        .map_err(stage_err(Stage::Plant))?;

    let mut per_mode_observability = Vec::with_capacity(spec.m_total);
    let mut per_mode_controllability = Vec::with_capacity(spec.m_total);
    for i in 0..spec.m_total {
        per_mode_observability.push(
            observability_grammian(&model, &c_s, model.n_rigid + i)
                .map_err(stage_err(Stage::Placement))?,
        );
        per_mode_controllability.push(
            controllability_grammian(&model, &b_a, model.n_rigid + i)
                .map_err(stage_err(Stage::Placement))?,
        );
    }

    let pair = DecouplingPair::new(&model, &b_a, &c_s, spec.n_controlled)
        .map_err(stage_err(Stage::Plant))?;
    let selection: Vec<usize> = (0..model.n_modes()).collect();
    let plant = build_plant(&model, &b_a, &c_s, &selection).map_err(stage_err(Stage::Plant))?;

    Ok(SolvedDesign {
        params,
        history: result.history,
        evaluations: result.evaluations_used,
        converged: result.converged,
        max_violation,
        feasible,
        model,
        frequencies_hz,
        sensor_point,
        placement_value,
        per_mode_observability,
        per_mode_controllability,
        pair,
        plant,
    })
}

fn synthesize_channels(
    cfg: &Config,
    solved: &SolvedDesign,
    opts: &PipelineOptions,
) -> StageResult<Vec<(ChannelReport, codesign_core::plant::ChannelCoefficients)>> {
    let settings = cfg.synthesis_settings();
    let mut out = Vec::with_capacity(solved.pair.n_channels());
    for k in 0..solved.pair.n_channels() {
        let ch = channel_coefficients(&solved.plant, &solved.pair, k)
            .map_err(stage_err(Stage::Plant))?;
        let (params, metrics) = maximize_bandwidth(&ch, &settings).map_err(|e| StageError {
            stage: Stage::Control,
            message: format!("channel {}: {e}", ch.label),
        })?;
        progress(
            opts.quiet,
            &format!(
                "[control] channel {}: bandwidth {:.1} Hz, peak sensitivity {:.3}",
                ch.label, metrics.bandwidth_hz, metrics.max_sensitivity
            ),
        );
        out.push((
            ChannelReport {
                label: ch.label.clone(),
                bandwidth_hz: metrics.bandwidth_hz,
                max_sensitivity: metrics.max_sensitivity,
                gain_margin_db: metrics.gain_margin_db,
                phase_margin_deg: metrics.phase_margin_deg,
                stable: metrics.stable,
                controller: params,
            },
            ch,
        ));
    }
    Ok(out)
}

fn placement_map_rows(
    cfg: &Config,
    solved: &SolvedDesign,
    spec: &FrequencySpec,
) -> Vec<[f64; 3]> {
    let domain = cfg.placement_domain();
    let pattern = vertical_sensor_pattern(cfg, RunMode::Proposed);
    let [lo, hi] = domain.region;
    let g = domain.grid_resolution;
    let mut rows = Vec::with_capacity(g * g);
    for ix in 0..g {
        for iy in 0..g {
            let p = [
                lo[0] + (hi[0] - lo[0]) * ix as f64 / (g - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * iy as f64 / (g - 1) as f64,
            ];
            if let Ok(j) = placement_objective(&solved.model, &pattern, p, spec, cfg.placement.gamma)
            {
                rows.push([p[0] * 1e3, p[1] * 1e3, j]);
            }
        }
    }
    rows
}

fn geometry_report(solved: &SolvedDesign) -> GeometryReport {
    let p = &solved.params;
    GeometryReport {
        base_thickness_mm: p.base_thickness * 1e3,
        rib_height_mm: p.rib_height * 1e3,
        rib_width_mm: p.rib_width * 1e3,
        rib_pitch_mm: p.rib_pitch * 1e3,
        frame_width_mm: p.frame_width * 1e3,
        mass_kg: solved.model.total_mass,
        frequencies_hz: solved.frequencies_hz.clone(),
        feasible: solved.feasible,
        max_violation: solved.max_violation,
        evaluations: solved.evaluations,
        converged: solved.converged,
    }
}

fn placement_report(solved: &SolvedDesign) -> PlacementReport {
    PlacementReport {
        sensor_point_mm: [solved.sensor_point[0] * 1e3, solved.sensor_point[1] * 1e3],
        objective: solved.placement_value,
        per_mode_observability: solved.per_mode_observability.clone(),
        per_mode_controllability: solved.per_mode_controllability.clone(),
        measurement_condition: solved.pair.meas_condition,
        actuation_condition: solved.pair.act_condition,
    }
}

/// Full pipeline for one mode, writing every artifact into out_dir. The
/// report is returned even when the geometry stage ends infeasible; the
/// caller maps that onto the geometry exit code.
pub fn run_design(
    loaded: &LoadedConfig,
    mode: RunMode,
    out_dir: &Path,
    opts: &PipelineOptions,
) -> StageResult<DesignReport> {
    let t0 = Instant::now();
    let cfg = &loaded.config;
    let spec = cfg.frequency_spec(mode).map_err(stage_err(Stage::Config))?;
    std::fs::create_dir_all(out_dir).map_err(stage_err(Stage::Io))?;

    let solved = solve_design(cfg, mode, &spec, opts)?;
    artifacts::write_geometry_history(&out_dir.join("geometry_history.csv"), &solved.history)
        .map_err(stage_err(Stage::Io))?;
    artifacts::write_modal_summary(&out_dir.join("modal.json"), &solved.model)
        .map_err(stage_err(Stage::Io))?;
    if mode == RunMode::Proposed {
        let rows = placement_map_rows(cfg, &solved, &spec);
        artifacts::write_placement_map(&out_dir.join("placement_map.csv"), &rows)
            .map_err(stage_err(Stage::Io))?;
    }

    let channels = synthesize_channels(cfg, &solved, opts)?;
    for (report, ch) in &channels {
        let grid = synthesis_grid(ch, &report.controller);
        artifacts::write_bode(
            &out_dir.join(format!("bode_{}.csv", report.label)),
            &grid,
            ch,
            &report.controller,
        )
        .map_err(stage_err(Stage::Io))?;
    }

    let report = DesignReport {
        schema_version: 1,
        mode: mode.as_str().to_string(),
        config_sha256: loaded.sha256.clone(),
        timestamp_utc: utc_timestamp(),
        runtime_s: t0.elapsed().as_secs_f64(),
        resolution: cfg.design_context(opts.resolution).resolution,
        geometry: geometry_report(&solved),
        placement: placement_report(&solved),
        channels: channels.into_iter().map(|(r, _)| r).collect(),
    };
    artifacts::write_report(&out_dir.join("report.json"), &report)
        .map_err(stage_err(Stage::Io))?;
    Ok(report)
}

/// Frequency-response export only: open loop, shaped loop, and sensitivity
/// per synthesized channel of the proposed design.
pub fn run_bode(
    loaded: &LoadedConfig,
    out_dir: &Path,
    opts: &PipelineOptions,
) -> StageResult<()> {
    let cfg = &loaded.config;
    let spec = cfg
        .frequency_spec(RunMode::Proposed)
        .map_err(stage_err(Stage::Config))?;
    std::fs::create_dir_all(out_dir).map_err(stage_err(Stage::Io))?;
    let solved = solve_design(cfg, RunMode::Proposed, &spec, opts)?;
    let channels = synthesize_channels(cfg, &solved, opts)?;
    for (report, ch) in &channels {
        let grid = synthesis_grid(ch, &report.controller);
        artifacts::write_bode(
            &out_dir.join(format!("bode_{}.csv", report.label)),
            &grid,
            ch,
            &report.controller,
        )
        .map_err(stage_err(Stage::Io))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub omega_high_hz: f64,
    pub mass_kg: f64,
    pub achieved_bandwidth_hz: f64,
    pub max_sensitivity: f64,
    pub feasible: bool,
}

/// Proposed-mode pipeline re-run across upper window frequencies; each row
/// reports the z channel. Infeasible windows produce rows, not errors.
pub fn run_sweep(
    loaded: &LoadedConfig,
    out_dir: &Path,
    opts: &PipelineOptions,
) -> StageResult<Vec<SweepRow>> {
    let cfg = &loaded.config;
    let values = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| StageError {
            stage: Stage::Config,
            message: "config has no [sweep] section".into(),
        })?
        .omega_high_hz
        .clone();
    std::fs::create_dir_all(out_dir).map_err(stage_err(Stage::Io))?;

    let settings = cfg.synthesis_settings();
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut point_cfg = cfg.clone();
        point_cfg.frequencies.omega_high_hz = v;
        let spec = point_cfg
            .frequency_spec(RunMode::Proposed)
            .map_err(stage_err(Stage::Config))?;
        let solved = solve_design(&point_cfg, RunMode::Proposed, &spec, opts)?;
        let z = channel_coefficients(&solved.plant, &solved.pair, 2)
            .map_err(stage_err(Stage::Plant))?;
        let (_, metrics) = maximize_bandwidth(&z, &settings).map_err(|e| StageError {
            stage: Stage::Control,
            message: format!("omega_high {v} Hz, channel z: {e}"),
        })?;
        rows.push(SweepRow {
            omega_high_hz: v,
            mass_kg: solved.model.total_mass,
            achieved_bandwidth_hz: metrics.bandwidth_hz,
            max_sensitivity: metrics.max_sensitivity,
            feasible: solved.feasible,
        });
    }
    artifacts::write_sweep(&out_dir.join("sweep.csv"), &rows).map_err(stage_err(Stage::Io))?;
    Ok(rows)
}

fn utc_timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs();
    let (days, rem) = (secs / 86400, secs % 86400);
    let (h, m, s) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let (y, mo, d) = civil_from_days(days as i64);
    format!("{y:04}-{mo:02}-{d:02}T{h:02}:{m:02}:{s:02}Z")
}

/// Gregorian date from days since 1970-01-01 (Euclidean era arithmetic).
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = (if mp < 10 { mp + 3 } else { mp - 9 }) as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}
