//! TOML run configuration: stage, material, magnets, frequency window,
//! design box, optimizer, placement, and loop-shaping settings. Units in the
//! file are mm and Hz; conversion to SI happens here at the boundary.

use std::f64::consts::TAU;
use std::path::Path;

use codesign_core::cobyla::{BoxBounds, CobylaSettings};
use codesign_core::fem::{LumpedAttachment, MaterialSpec, StageParams};
use codesign_core::geometry::{DesignContext, FrequencySpec};
use codesign_core::placement::PlacementDomain;
use codesign_core::control::SynthesisSettings;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const MM: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Proposed,
    Baseline,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Proposed => "proposed",
            RunMode::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub stage: StageSection,
    pub material: MaterialSection,
    pub magnets: Vec<MagnetSection>,
    pub frequencies: FrequencySection,
    pub geometry: GeometrySection,
    pub optimizer: OptimizerSection,
    pub placement: PlacementSection,
    pub lateral_sensors: Vec<LateralSensorSection>,
    pub control: ControlSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub edge_mm: f64,
    pub resolution: usize,
    /// Total modes solved per design, rigid body motions included.
    pub n_modes: usize,
    pub damping_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub young_modulus_gpa: f64,
    pub poisson_ratio: f64,
    pub density_kg_m3: f64,
}

/// Square permanent magnet modeled as a lumped mass with in-plane-axis
/// rotary inertia m t^2 / 12.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetSection {
    pub center_mm: [f64; 2],
    pub size_mm: f64,
    pub thickness_mm: f64,
    pub density_kg_m3: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySection {
    pub n_controlled: usize,
    pub m_total: usize,
    pub omega_low_hz: f64,
    pub omega_high_hz: f64,
    /// Lower bound on every constrained mode in the baseline run.
    pub baseline_floor_hz: f64,
}

/// Design box in the order base_thickness, rib_height, rib_width, rib_pitch,
/// frame_width. Equal lower/upper entries pin a coordinate.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub lower_mm: [f64; 5],
    pub upper_mm: [f64; 5],
    /// Defaults to the box midpoint.
    #[serde(default)]
    pub initial_mm: Option<[f64; 5]>,
    /// Separate box for the baseline run; falls back to the main box.
    #[serde(default)]
    pub baseline: Option<BaselineBox>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineBox {
    pub lower_mm: [f64; 5],
    pub upper_mm: [f64; 5],
    #[serde(default)]
    pub initial_mm: Option<[f64; 5]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evaluations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSection {
    /// Weight punishing observability of uncontrolled constrained modes.
    pub gamma: f64,
    pub grid_resolution: usize,
    /// [[x_min, y_min], [x_max, y_max]] search region for the sensor point.
    pub region_mm: [[f64; 2]; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateralSensorSection {
    pub position_mm: [f64; 2],
    /// In-plane measurement axis, "x" or "y".
    pub axis: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub alpha: f64,
    pub lowpass_damping: f64,
    pub robustness_bound: f64,
    pub bandwidth_min_hz: f64,
    pub bandwidth_max_hz: f64,
    pub rel_tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub omega_high_hz: Vec<f64>,
}

/// Parsed configuration plus the hash of the exact file bytes.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: Config,
    pub sha256: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, String> {
    let bytes = std::fs::read(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config: Config = toml::from_str(
        std::str::from_utf8(&bytes).map_err(|e| format!("{}: not utf-8: {e}", path.display()))?,
    )
    .map_err(|e| format!("{}: {e}", path.display()))?;
    config.validate()?;
    let sha256 = hex_digest(&bytes);
    Ok(LoadedConfig { config, sha256 })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

impl Config {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != 1 {
            return Err(format!(
                "schema_version {} unsupported; this build reads version 1",
                self.schema_version
            ));
        }
        if !(self.stage.edge_mm > 0.0) {
            return Err("stage.edge_mm must be positive".into());
        }
        if self.magnets.is_empty() {
            return Err("at least one magnet attachment is required".into());
        }
        for (i, m) in self.magnets.iter().enumerate() {
            if !(m.size_mm > 0.0 && m.thickness_mm > 0.0 && m.density_kg_m3 > 0.0) {
                return Err(format!("magnets[{i}] has a non-positive dimension or density"));
            }
        }
        if self.frequencies.n_controlled >= self.frequencies.m_total {
            return Err(format!(
                "frequencies.n_controlled {} must stay below m_total {}",
                self.frequencies.n_controlled, self.frequencies.m_total
            ));
        }
        if !(self.frequencies.omega_low_hz > 0.0
            && self.frequencies.omega_high_hz > self.frequencies.omega_low_hz)
        {
            return Err("frequencies window needs 0 < omega_low_hz < omega_high_hz".into());
        }
        if !(self.frequencies.baseline_floor_hz > 0.0) {
            return Err("frequencies.baseline_floor_hz must be positive".into());
        }
        for (l, u) in self
            .geometry
            .lower_mm
            .iter()
            .zip(self.geometry.upper_mm.iter())
        {
            if !(u >= l) {
                return Err(format!("geometry bound pair [{l}, {u}] mm is inverted"));
            }
        }
        for s in &self.lateral_sensors {
            if s.axis != "x" && s.axis != "y" {
                return Err(format!(
                    "lateral sensor axis '{}' must be 'x' or 'y'",
                    s.axis
                ));
            }
        }
        let [lo, hi] = self.placement.region_mm;
        if !(lo[0] <= hi[0] && lo[1] <= hi[1]) {
            return Err("placement.region_mm is inverted".into());
        }
        if !(self.control.bandwidth_min_hz > 0.0
            && self.control.bandwidth_max_hz > self.control.bandwidth_min_hz)
        {
            return Err("control bandwidth search range is not ordered and positive".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.omega_high_hz.is_empty() {
                return Err("sweep.omega_high_hz is empty".into());
            }
            if sweep.omega_high_hz.iter().any(|v| !(*v > 0.0)) {
                return Err("sweep.omega_high_hz entries must be positive".into());
            }
        }
        Ok(())
    }

    pub fn stage_edge(&self) -> f64 {
        self.stage.edge_mm * MM
    }

    pub fn material(&self) -> MaterialSpec {
        MaterialSpec {
            young_modulus: self.material.young_modulus_gpa * 1e9,
            poisson_ratio: self.material.poisson_ratio,
            density: self.material.density_kg_m3,
        }
    }

    pub fn attachments(&self) -> Vec<LumpedAttachment> {
        self.magnets
            .iter()
            .map(|m| {
                let a = m.size_mm * MM;
                let t = m.thickness_mm * MM;
                let mass = a * a * t * m.density_kg_m3;
                let i_axis = mass * t * t / 12.0;
                LumpedAttachment {
                    center: [m.center_mm[0] * MM, m.center_mm[1] * MM],
                    mass,
                    rotary_inertia: [i_axis, i_axis, 0.0],
                    footprint: a,
                }
            })
            .collect()
    }

    pub fn design_context(&self, resolution_override: Option<usize>) -> DesignContext {
        DesignContext {
            stage_edge: self.stage_edge(),
            resolution: resolution_override.unwrap_or(self.stage.resolution),
            material: self.material(),
            attachments: self.attachments(),
            n_modes: self.stage.n_modes,
            damping_ratio: self.stage.damping_ratio,
        }
    }

    /// Frequency window for one run mode. The baseline constrains every
    /// mode from below at the floor frequency; its omega_low is synthetic
    /// and unused since n_controlled is zero there.
    pub fn frequency_spec(&self, mode: RunMode) -> Result<FrequencySpec, String> {
        let f = &self.frequencies;
        match mode {
            RunMode::Proposed => FrequencySpec::new(
                f.n_controlled,
                f.m_total,
                TAU * f.omega_low_hz,
                TAU * f.omega_high_hz,
            ),
            RunMode::Baseline => FrequencySpec::new(
                0,
                f.m_total,
                0.5 * TAU * f.baseline_floor_hz,
                TAU * f.baseline_floor_hz,
            ),
        }
        .map_err(|e| e.to_string())
    }

    fn box_mm(&self, mode: RunMode) -> ([f64; 5], [f64; 5], Option<[f64; 5]>) {
        match (mode, &self.geometry.baseline) {
            (RunMode::Baseline, Some(b)) => (b.lower_mm, b.upper_mm, b.initial_mm),
            _ => (
                self.geometry.lower_mm,
                self.geometry.upper_mm,
                self.geometry.initial_mm,
            ),
        }
    }

    pub fn bounds(&self, mode: RunMode) -> Result<BoxBounds, String> {
        let (lo, hi, _) = self.box_mm(mode);
        BoxBounds::new(
            lo.iter().map(|v| v * MM).collect(),
            hi.iter().map(|v| v * MM).collect(),
        )
        .map_err(|e| e.to_string())
    }

    pub fn initial(&self, mode: RunMode) -> Result<StageParams, String> {
        let (lo, hi, initial) = self.box_mm(mode);
        let theta: Vec<f64> = match initial {
            Some(given) => given.iter().map(|v| v * MM).collect(),
            None => lo
                .iter()
                .zip(hi.iter())
                .map(|(l, u)| 0.5 * (l + u) * MM)
                .collect(),
        };
        StageParams::from_slice(&theta).map_err(|e| e.to_string())
    }

    pub fn cobyla_settings(&self) -> CobylaSettings {
        CobylaSettings {
            rho_begin: self.optimizer.rho_begin,
            rho_end: self.optimizer.rho_end,
            max_evaluations: self.optimizer.max_evaluations,
        }
    }

    pub fn placement_domain(&self) -> PlacementDomain {
        let [lo, hi] = self.placement.region_mm;
        PlacementDomain {
            region: [[lo[0] * MM, lo[1] * MM], [hi[0] * MM, hi[1] * MM]],
            grid_resolution: self.placement.grid_resolution,
        }
    }

    pub fn synthesis_settings(&self) -> SynthesisSettings {
        SynthesisSettings {
            alpha: self.control.alpha,
            z_lp: self.control.lowpass_damping,
            robustness_bound: self.control.robustness_bound,
            omega_min: TAU * self.control.bandwidth_min_hz,
            omega_max: TAU * self.control.bandwidth_max_hz,
            rel_tol: self.control.rel_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnet_inertia_follows_the_plate_rule() {
        let cfg_text = r#"
schema_version = 1
[stage]
edge_mm = 300.0
resolution = 12
n_modes = 12
damping_ratio = 0.005
[material]
young_modulus_gpa = 71.7
poisson_ratio = 0.33
density_kg_m3 = 2810.0
[[magnets]]
center_mm = [35.0, 35.0]
size_mm = 69.85
thickness_mm = 6.35
density_kg_m3 = 7500.0
[frequencies]
n_controlled = 1
m_total = 4
omega_low_hz = 50.0
omega_high_hz = 600.0
baseline_floor_hz = 250.0
[geometry]
lower_mm = [0.635, 0.0, 12.0, 100.0, 12.0]
upper_mm = [3.0, 0.0, 12.0, 100.0, 12.0]
[optimizer]
rho_begin = 0.1
rho_end = 1e-4
max_evaluations = 400
[placement]
gamma = 50.0
grid_resolution = 15
region_mm = [[20.0, 20.0], [280.0, 280.0]]
[[lateral_sensors]]
position_mm = [150.0, 280.0]
axis = "x"
[control]
alpha = 3.0
lowpass_damping = 0.7
robustness_bound = 2.0
bandwidth_min_hz = 1.0
bandwidth_max_hz = 400.0
rel_tol = 0.01
"#;
        let cfg: Config = toml::from_str(cfg_text).unwrap();
        cfg.validate().unwrap();
        let att = cfg.attachments();
        assert_eq!(att.len(), 1);
        let a = 0.06985f64;
        let t = 0.00635f64;
        let mass = a * a * t * 7500.0;
        assert!((att[0].mass - mass).abs() < 1e-12);
        assert!((att[0].rotary_inertia[0] - mass * t * t / 12.0).abs() < 1e-15);
        assert_eq!(att[0].rotary_inertia[2], 0.0);

        // Proposed box pins the rib coordinates; baseline falls back to it.
        let b = cfg.bounds(RunMode::Proposed).unwrap();
        assert_eq!(b.lower[1], b.upper[1]);
        let init = cfg.initial(RunMode::Proposed).unwrap();
        assert!((init.base_thickness - 0.5 * (0.000635 + 0.003)).abs() < 1e-12);

        // Baseline spec floors every constrained mode.
        let spec = cfg.frequency_spec(RunMode::Baseline).unwrap();
        assert_eq!(spec.n_controlled, 0);
        assert!((spec.omega_high - TAU * 250.0).abs() < 1e-9);
    }

    #[test]
    fn bad_sections_are_rejected_with_context() {
        let mut base = String::from(
            r#"
schema_version = 2
"#,
        );
        assert!(toml::from_str::<Config>(&base).is_err());
        base.clear();
        // Unknown keys fail loudly rather than being ignored.
        assert!(toml::from_str::<Config>("schema_version = 1\nunknown_section = 3\n").is_err());
    }
}
