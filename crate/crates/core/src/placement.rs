//! Actuator/sensor placement by modal grammians: per-mode controllability
//! and observability measures, a weighted objective separating controlled
//! from uncontrolled modes, and a grid-plus-refinement search over a planar
//! placement domain.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::fem::{Direction, ModalModel};
use crate::geometry::FrequencySpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviceKind {
    Actuator,
    Sensor,
}

/// How device positions derive from the two placement variables.
#[derive(Clone, Debug, PartialEq)]
pub enum PatternLayout {
    /// One device per offset, placed at theta + offset.
    Offsets(Vec<[f64; 2]>),
    /// Four devices at the images of theta under 90 degree rotations about
    /// a fixed center. Restricted to out-of-plane channels because rotation
    /// would remap in-plane measurement axes.
    FourFoldRotation { center: [f64; 2] },
}

/// A set of devices driven by a single (x, y) placement parameter, with the
/// measured or actuated components listed per device.
#[derive(Clone, Debug, PartialEq)]
pub struct DevicePattern {
    pub kind: DeviceKind,
    pub layout: PatternLayout,
    pub directions: Vec<Vec<Direction>>,
}

impl DevicePattern {
    pub fn device_count(&self) -> usize {
        match &self.layout {
            PatternLayout::Offsets(offsets) => offsets.len(),
            PatternLayout::FourFoldRotation { .. } => 4,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.directions.iter().map(|d| d.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.device_count() == 0 {
            return Err(CoreError::InvalidParameter(
                "device pattern is empty".into(),
            ));
        }
        if self.directions.len() != self.device_count() {
            return Err(CoreError::InvalidParameter(format!(
                "{} direction sets for {} devices",
                self.directions.len(),
                self.device_count()
            )));
        }
        if self.channel_count() == 0 {
            return Err(CoreError::InvalidParameter(
                "device pattern has no channels".into(),
            ));
        }
        if matches!(self.layout, PatternLayout::FourFoldRotation { .. })
            && self
                .directions
                .iter()
                .flatten()
                .any(|d| *d != Direction::OutOfPlane)
        {
            return Err(CoreError::InvalidParameter(
                "rotated pattern supports out-of-plane channels only".into(),
            ));
        }
        Ok(())
    }

    /// Device positions for a given placement parameter.
    pub fn positions(&self, theta: [f64; 2]) -> Vec<[f64; 2]> {
        match &self.layout {
            PatternLayout::Offsets(offsets) => offsets
                .iter()
                .map(|o| [theta[0] + o[0], theta[1] + o[1]])
                .collect(),
            PatternLayout::FourFoldRotation { center } => {
                let (dx, dy) = (theta[0] - center[0], theta[1] - center[1]);
                vec![
                    [center[0] + dx, center[1] + dy],
                    [center[0] - dy, center[1] + dx],
                    [center[0] - dx, center[1] - dy],
                    [center[0] + dy, center[1] - dx],
                ]
            }
        }
    }
}

/// Rectangular search region with a uniform evaluation grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacementDomain {
    /// [[x_min, y_min], [x_max, y_max]] in stage coordinates (m).
    pub region: [[f64; 2]; 2],
    pub grid_resolution: usize,
}

impl PlacementDomain {
    pub fn validate(&self, stage_edge: f64) -> Result<()> {
        let [lo, hi] = self.region;
        for k in 0..2 {
            if !(lo[k] <= hi[k] && lo[k] >= 0.0 && hi[k] <= stage_edge) {
                return Err(CoreError::InvalidParameter(format!(
                    "placement region [{:?}, {:?}] leaves the stage envelope",
                    lo, hi
                )));
            }
        }
        if self.grid_resolution < 5 {
            return Err(CoreError::InvalidParameter(format!(
                "grid resolution {} too coarse; need at least 5",
                self.grid_resolution
            )));
        }
        Ok(())
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let [lo, hi] = self.region;
        p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
    }
}

/// Per-mode grammians over the constrained flexible modes plus the weighted
/// objective. Only the list matching the pattern kind is populated; the
/// other stays empty.
#[derive(Clone, Debug, PartialEq)]
pub struct GrammianReport {
    pub per_mode_controllability: Vec<f64>,
    pub per_mode_observability: Vec<f64>,
    pub objective_value: f64,
}

fn channel_matrix(
    model: &ModalModel,
    pattern: &DevicePattern,
    theta: [f64; 2],
) -> Result<DMatrix<f64>> {
    pattern.validate()?;
    let mesh = &model.mesh;
    let mut cols = DMatrix::zeros(mesh.n_dofs(), pattern.channel_count());
    let mut channel = 0;
    for (device, pos) in pattern.positions(theta).iter().enumerate() {
        let (nodes, weights) = mesh.interpolation(*pos)?;
        for dir in &pattern.directions[device] {
            for (node, w) in nodes.iter().zip(weights.iter()) {
                cols[(mesh.dof_index(*node, dir.component()), channel)] = *w;
            }
            channel += 1;
        }
    }
    Ok(cols)
}

/// Force assembling matrix: one column per actuator channel, distributing a
/// unit force onto mesh dofs by bilinear interpolation.
pub fn input_matrix(
    model: &ModalModel,
    pattern: &DevicePattern,
    theta: [f64; 2],
) -> Result<DMatrix<f64>> {
    if pattern.kind != DeviceKind::Actuator {
        return Err(CoreError::InvalidParameter(
            "input_matrix needs an actuator pattern".into(),
        ));
    }
    channel_matrix(model, pattern, theta)
}

/// Measurement assembling matrix: one row per sensor channel, sampling mesh
/// dofs by bilinear interpolation.
pub fn output_matrix(
    model: &ModalModel,
    pattern: &DevicePattern,
    theta: [f64; 2],
) -> Result<DMatrix<f64>> {
    if pattern.kind != DeviceKind::Sensor {
        return Err(CoreError::InvalidParameter(
            "output_matrix needs a sensor pattern".into(),
        ));
    }
    Ok(channel_matrix(model, pattern, theta)?.transpose())
}

fn check_flexible(model: &ModalModel, mode: usize) -> Result<(f64, f64)> {
    if mode >= model.n_modes() {
        return Err(CoreError::InvalidParameter(format!(
            "mode {mode} out of range ({} solved)",
            model.n_modes()
        )));
    }
    if mode < model.n_rigid {
        return Err(CoreError::InvalidParameter(format!(
            "mode {mode} is rigid; grammians are defined for flexible modes only"
        )));
    }
    Ok((model.frequencies[mode], model.damping[mode]))
}

/// Controllability measure of one flexible mode: squared modal force gain
/// over all channels, normalized by 4 zeta omega.
pub fn controllability_grammian(
    model: &ModalModel,
    b_a: &DMatrix<f64>,
    mode: usize,
) -> Result<f64> {
    let (omega, zeta) = check_flexible(model, mode)?;
    let phi = model.mode_shapes.column(mode);
    let mut sq = 0.0;
    for c in 0..b_a.ncols() {
        let g = b_a.column(c).dot(&phi);
        sq += g * g;
    }
    Ok(sq / (4.0 * zeta * omega))
}

/// Observability measure of one flexible mode: squared modal reading over
/// all channels, normalized by 4 zeta omega.
pub fn observability_grammian(
    model: &ModalModel,
    c_s: &DMatrix<f64>,
    mode: usize,
) -> Result<f64> {
    let (omega, zeta) = check_flexible(model, mode)?;
    let phi = model.mode_shapes.column(mode);
    let mut sq = 0.0;
    for r in 0..c_s.nrows() {
        let g = c_s.row(r).transpose().dot(&phi);
        sq += g * g;
    }
    Ok(sq / (4.0 * zeta * omega))
}

fn grammians_at(
    model: &ModalModel,
    pattern: &DevicePattern,
    theta: [f64; 2],
    m_total: usize,
) -> Result<Vec<f64>> {
    if model.n_modes() < model.n_rigid + m_total {
        return Err(CoreError::InvalidParameter(format!(
            "model has {} flexible modes, placement needs {m_total}",
            model.n_modes() - model.n_rigid
        )));
    }
    let mut w = Vec::with_capacity(m_total);
    match pattern.kind {
        DeviceKind::Actuator => {
            let b_a = input_matrix(model, pattern, theta)?;
            for i in 0..m_total {
                w.push(controllability_grammian(model, &b_a, model.n_rigid + i)?);
            }
        }
        DeviceKind::Sensor => {
            let c_s = output_matrix(model, pattern, theta)?;
            for i in 0..m_total {
                w.push(observability_grammian(model, &c_s, model.n_rigid + i)?);
            }
        }
    }
    Ok(w)
}

/// Weighted placement objective: grammian sum over controlled modes minus
/// gamma times the sum over the remaining constrained modes. Larger is
/// better (couple to what is actively damped, avoid what is not).
pub fn placement_objective(
    model: &ModalModel,
    pattern: &DevicePattern,
    theta: [f64; 2],
    spec: &FrequencySpec,
    gamma: f64,
) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(CoreError::InvalidParameter(format!(
            "gamma {gamma} must be a nonnegative weight"
        )));
    }
    let w = grammians_at(model, pattern, theta, spec.m_total)?;
    let controlled: f64 = w[..spec.n_controlled].iter().sum();
    let rest: f64 = w[spec.n_controlled..].iter().sum();
    Ok(controlled - gamma * rest)
}

/// Exhaustive grid search over the domain followed by compass pattern
/// refinement down to a 1e-5 m step. Grid ties break toward the smallest
/// (x, y) in lexicographic order.
pub fn optimize_placement(
    model: &ModalModel,
    pattern: &DevicePattern,
    domain: &PlacementDomain,
    spec: &FrequencySpec,
    gamma: f64,
) -> Result<([f64; 2], GrammianReport)> {
    pattern.validate()?;
    domain.validate(model.mesh.stage_edge)?;

    let [lo, hi] = domain.region;
    let g = domain.grid_resolution;
    let coord = |lo: f64, hi: f64, k: usize| {
        if g == 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (g - 1) as f64
        }
    };

    let mut best: Option<([f64; 2], f64)> = None;
    for ix in 0..g {
        for iy in 0..g {
            let p = [coord(lo[0], hi[0], ix), coord(lo[1], hi[1], iy)];
            let Ok(j) = placement_objective(model, pattern, p, spec, gamma) else {
                continue;
            };
            // Strict improvement keeps the first (lexicographically
            // smallest) of equal-valued grid points.
            if best.map_or(true, |(_, bj)| j > bj) {
                best = Some((p, j));
            }
        }
    }
    let (mut theta, mut value) = best.ok_or_else(|| {
        CoreError::InvalidParameter(
            "no placement grid point keeps every device inside the envelope".into(),
        )
    })?;

    let mut step = ((hi[0] - lo[0]).max(hi[1] - lo[1])) / (g.max(2) - 1) as f64;
    while step >= 1e-5 {
        let mut moved = false;
        for d in [[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]] {
            let p = [theta[0] + d[0], theta[1] + d[1]];
            if !domain.contains(p) {
                continue;
            }
            if let Ok(j) = placement_objective(model, pattern, p, spec, gamma) {
                // Demand more than rounding noise so a flat landscape does
                // not induce a random walk.
                if j > value + 1e-12 * (1.0 + value.abs()) {
                    theta = p;
                    value = j;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }

    let w = grammians_at(model, pattern, theta, spec.m_total)?;
    let report = match pattern.kind {
        DeviceKind::Actuator => GrammianReport {
            per_mode_controllability: w,
            per_mode_observability: Vec::new(),
            objective_value: value,
        },
        DeviceKind::Sensor => GrammianReport {
            per_mode_controllability: Vec::new(),
            per_mode_observability: w,
            objective_value: value,
        },
    };
    Ok((theta, report))
}
