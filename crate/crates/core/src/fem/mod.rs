//! Parametric finite-element model of a ribbed stage plate with lumped
//! magnet masses: mesh construction, mass/stiffness assembly, and the
//! free-free modal solve that feeds placement, plant, and control design.

pub mod banded;
mod element;
pub use element::{ELEM_DOF, NODE_DOF};
mod assemble;
pub use assemble::assemble;
mod eigen;
pub use eigen::{dense_generalized_eigen, lowest_eigenpairs, EigenOptions};

use crate::error::{CoreError, Result};
use banded::SymmetricBanded;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Manufacturability floor on rib width, meters.
pub const MIN_RIB_WIDTH: f64 = 1.0e-3;
/// Manufacturability floor on base sheet thickness, meters.
pub const MIN_BASE_THICKNESS: f64 = 0.635e-3;

/// Geometric design vector of the ribbed plate. All lengths in meters.
///
/// The rib layout is a symmetric grid: centerlines run at
/// stage_edge/2 + k * rib_pitch in both directions (so the center lines are
/// always present), plus a solid frame band of width frame_width along the
/// outer edges. Ribbed elements carry thickness base_thickness + rib_height
/// about the midplane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub base_thickness: f64,
    pub rib_height: f64,
    pub rib_width: f64,
    pub rib_pitch: f64,
    pub frame_width: f64,
}

impl StageParams {
    /// Canonical vector order used by the optimizer and history files.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.base_thickness,
            self.rib_height,
            self.rib_width,
            self.rib_pitch,
            self.frame_width,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 5 {
            return Err(CoreError::InvalidParameter(format!(
                "stage parameter vector needs 5 entries, got {}",
                v.len()
            )));
        }
        Ok(StageParams {
            base_thickness: v[0],
            rib_height: v[1],
            rib_width: v[2],
            rib_pitch: v[3],
            frame_width: v[4],
        })
    }

    /// rib_height = 0 is the degenerate uniform plate and is allowed; all
    /// other fields must be strictly positive and manufacturable.
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.to_vec().iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(CoreError::InvalidParameter(
                "stage parameters must be finite".into(),
            ));
        }
        if self.base_thickness < MIN_BASE_THICKNESS {
            return Err(CoreError::InvalidParameter(format!(
                "base_thickness {} m below manufacturability floor {} m",
                self.base_thickness, MIN_BASE_THICKNESS
            )));
        }
        if self.rib_width < MIN_RIB_WIDTH {
            return Err(CoreError::InvalidParameter(format!(
                "rib_width {} m below manufacturability floor {} m",
                self.rib_width, MIN_RIB_WIDTH
            )));
        }
        if self.rib_height < 0.0 {
            return Err(CoreError::InvalidParameter(
                "rib_height must be nonnegative".into(),
            ));
        }
        if self.rib_pitch <= self.rib_width {
            return Err(CoreError::InvalidParameter(format!(
                "rib_pitch {} m must exceed rib_width {} m",
                self.rib_pitch, self.rib_width
            )));
        }
        if self.frame_width <= 0.0 {
            return Err(CoreError::InvalidParameter(
                "frame_width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Isotropic material constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0 && self.young_modulus.is_finite()) {
            return Err(CoreError::InvalidParameter(
                "young_modulus must be positive".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(CoreError::InvalidParameter(
                "poisson_ratio must lie in [0, 0.5)".into(),
            ));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(CoreError::InvalidParameter(
                "density must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Rigid attachment (magnet array) smeared over the mesh nodes inside its
/// square footprint.
///
/// rotary_inertia = [about x, about y, about z] supplements the inertia that
/// the footprint-distributed translational mass already provides; for a
/// thin block the x/y supplements are mass * thickness^2 / 12. The vertical-
/// axis component has no mesh dof to land on (no drilling rotation) and the
/// in-plane spread already realizes it, so it must be zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LumpedAttachment {
    pub center: [f64; 2],
    pub mass: f64,
    pub rotary_inertia: [f64; 3],
    pub footprint: f64,
}

impl LumpedAttachment {
    pub fn validate(&self, stage_edge: f64) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(CoreError::InvalidParameter(
                "attachment mass must be positive".into(),
            ));
        }
        if !(self.footprint > 0.0) {
            return Err(CoreError::InvalidParameter(
                "attachment footprint must be positive".into(),
            ));
        }
        if self.rotary_inertia[0] < 0.0 || self.rotary_inertia[1] < 0.0 {
            return Err(CoreError::InvalidParameter(
                "attachment rotary inertia must be nonnegative".into(),
            ));
        }
        if self.rotary_inertia[2] != 0.0 {
            return Err(CoreError::InvalidParameter(
                "vertical-axis rotary inertia supplement is not representable \
                 (no drilling dof); the footprint spread already provides it"
                    .into(),
            ));
        }
        let h = 0.5 * self.footprint;
        for c in self.center {
            if c - h < -1e-12 || c + h > stage_edge + 1e-12 {
                return Err(CoreError::OutsideEnvelope {
                    x: self.center[0],
                    y: self.center[1],
                });
            }
        }
        Ok(())
    }
}

/// Displacement component measured or actuated at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    InPlaneX,
    InPlaneY,
    OutOfPlane,
}

impl Direction {
    /// Nodal dof component carrying this displacement.
    pub fn component(self) -> usize {
        match self {
            Direction::InPlaneX => 0,
            Direction::InPlaneY => 1,
            Direction::OutOfPlane => 2,
        }
    }
}

/// Structured rectangular mesh of the square stage, 5 dofs per node in the
/// order [u, v, w, s_x, s_y]; global dof = 5 * node + component.
#[derive(Clone, Debug, PartialEq)]
pub struct FEMesh {
    pub stage_edge: f64,
    pub resolution: usize,
    pub node_coords: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    pub element_thickness: Vec<f64>,
}

impl FEMesh {
    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_dofs(&self) -> usize {
        NODE_DOF * self.n_nodes()
    }

    pub fn dof_index(&self, node: usize, component: usize) -> usize {
        debug_assert!(component < NODE_DOF);
        NODE_DOF * node + component
    }

    /// Element edge length of the structured grid.
    pub fn spacing(&self) -> f64 {
        self.stage_edge / self.resolution as f64
    }

    /// Bilinear interpolation stencil at an in-envelope point: the four
    /// corner nodes of the containing element and their weights.
    pub fn interpolation(&self, point: [f64; 2]) -> Result<([usize; 4], [f64; 4])> {
        let eps = 1e-9 * self.stage_edge;
        let [x, y] = point;
        if x < -eps || x > self.stage_edge + eps || y < -eps || y > self.stage_edge + eps {
            return Err(CoreError::OutsideEnvelope { x, y });
        }
        let h = self.spacing();
        let last = self.resolution - 1;
        let ex = ((x / h).floor() as isize).clamp(0, last as isize) as usize;
        let ey = ((y / h).floor() as isize).clamp(0, last as isize) as usize;
        let xi = 2.0 * (x - ex as f64 * h) / h - 1.0;
        let eta = 2.0 * (y - ey as f64 * h) / h - 1.0;
        let nodes = self.elements[ey * self.resolution + ex];
        let weights = [
            0.25 * (1.0 - xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 - eta),
            0.25 * (1.0 + xi) * (1.0 + eta),
            0.25 * (1.0 - xi) * (1.0 + eta),
        ];
        Ok((nodes, weights))
    }
}

/// Whether an element centered at (xc, yc) falls on the rib/frame layout.
fn on_rib_layout(xc: f64, yc: f64, params: &StageParams, edge: f64) -> bool {
    let fw = params.frame_width;
    if xc < fw || xc > edge - fw || yc < fw || yc > edge - fw {
        return true;
    }
    let half_w = 0.5 * params.rib_width + 1e-12 * edge;
    let near_line = |c: f64| {
        // Distance from c to the nearest line edge/2 + k * pitch.
        let t = (c - 0.5 * edge) / params.rib_pitch;
        let frac = (t - t.round()).abs() * params.rib_pitch;
        frac <= half_w
    };
    near_line(xc) || near_line(yc)
}

/// Builds the structured quad mesh for a parameter set. Elements overlapped
/// by the rib grid or the outer frame carry base + rib thickness.
pub fn build_mesh(params: &StageParams, stage_edge: f64, resolution: usize) -> Result<FEMesh> {
    params.validate()?;
    if !(stage_edge > 0.0 && stage_edge.is_finite()) {
        return Err(CoreError::InvalidParameter(
            "stage_edge must be positive".into(),
        ));
    }
    if resolution < 8 {
        return Err(CoreError::InvalidParameter(format!(
            "resolution {resolution} too coarse; need at least 8 elements per edge"
        )));
    }
    if params.frame_width >= 0.5 * stage_edge {
        return Err(CoreError::InvalidParameter(format!(
            "frame_width {} m must be below half the stage edge {} m",
            params.frame_width,
            0.5 * stage_edge
        )));
    }
    let h = stage_edge / resolution as f64;
    if params.rib_height > 0.0 && params.rib_width < h {
        return Err(CoreError::MeshResolution {
            resolution,
            rib_width_m: params.rib_width,
            element_size_m: h,
        });
    }

    let n = resolution + 1;
    let mut node_coords = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            node_coords.push([ix as f64 * h, iy as f64 * h]);
        }
    }
    let mut elements = Vec::with_capacity(resolution * resolution);
    let mut element_thickness = Vec::with_capacity(resolution * resolution);
    for ey in 0..resolution {
        for ex in 0..resolution {
            let n0 = ey * n + ex;
            elements.push([n0, n0 + 1, n0 + n + 1, n0 + n]);
            let xc = (ex as f64 + 0.5) * h;
            let yc = (ey as f64 + 0.5) * h;
            let ribbed =
                params.rib_height > 0.0 && on_rib_layout(xc, yc, params, stage_edge);
            element_thickness.push(if ribbed {
                params.base_thickness + params.rib_height
            } else {
                params.base_thickness
            });
        }
    }
    Ok(FEMesh {
        stage_edge,
        resolution,
        node_coords,
        elements,
        element_thickness,
    })
}

/// Total structure mass: shell volume times density plus attachment masses.
pub fn stage_mass(mesh: &FEMesh, material: &MaterialSpec, attachments: &[LumpedAttachment]) -> f64 {
    let h = mesh.spacing();
    let area = h * h;
    let shell: f64 = mesh
        .element_thickness
        .iter()
        .map(|t| area * t * material.density)
        .sum();
    shell + attachments.iter().map(|a| a.mass).sum::<f64>()
}

/// Free-free modal description: ascending frequencies (rad/s), mass-
/// normalized shapes (one column per mode over mesh dofs), uniform damping.
#[derive(Clone, Debug)]
pub struct ModalModel {
    pub frequencies: Vec<f64>,
    pub mode_shapes: DMatrix<f64>,
    pub damping: Vec<f64>,
    pub mesh: Arc<FEMesh>,
    pub n_rigid: usize,
    /// Mass-weighted centroid of the stage plus attachments.
    pub mass_center: [f64; 2],
    pub total_mass: f64,
}

impl ModalModel {
    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }

    /// Frequencies of flexible modes only, rad/s.
    pub fn flexible_frequencies(&self) -> &[f64] {
        &self.frequencies[self.n_rigid..]
    }
}

/// Interpolated displacement of every mode at a point, for one component.
pub fn mode_shape_at(model: &ModalModel, point: [f64; 2], direction: Direction) -> Result<Vec<f64>> {
    let (nodes, weights) = model.mesh.interpolation(point)?;
    let comp = direction.component();
    let mut out = vec![0.0; model.n_modes()];
    for (m, val) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (node, w) in nodes.iter().zip(weights.iter()) {
            acc += w * model.mode_shapes[(model.mesh.dof_index(*node, comp), m)];
        }
        *val = acc;
    }
    Ok(out)
}

/// Unit rigid-body displacement fields about a point, one column per motion
/// in the order [Tx, Ty, Tz, Rx, Ry, Rz]. Rotations are unit radians.
pub fn rigid_body_fields(mesh: &FEMesh, about: [f64; 2]) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(mesh.n_dofs(), 6);
    for (node, c) in mesh.node_coords.iter().enumerate() {
        let (dx, dy) = (c[0] - about[0], c[1] - about[1]);
        let base = NODE_DOF * node;
        r[(base, 0)] = 1.0;
        r[(base + 1, 1)] = 1.0;
        r[(base + 2, 2)] = 1.0;
        r[(base + 2, 3)] = dy;
        r[(base + 4, 3)] = 1.0;
        r[(base + 2, 4)] = -dx;
        r[(base + 3, 4)] = -1.0;
        r[(base, 5)] = -dy;
        r[(base + 1, 5)] = dx;
    }
    r
}

/// Fraction of the first flexible estimate below which a frequency counts as
/// a rigid-body mode.
pub const RIGID_THRESHOLD_RATIO: f64 = 1e-3;

/// Solves K phi = omega^2 M phi for the lowest n_modes pairs and packages a
/// mass-normalized modal model with uniform modal damping.
pub fn solve_modes(
    mesh: &FEMesh,
    mass: &SymmetricBanded,
    stiffness: &SymmetricBanded,
    n_modes: usize,
    damping_ratio: f64,
) -> Result<ModalModel> {
    if n_modes < 8 {
        return Err(CoreError::InvalidParameter(format!(
            "n_modes {n_modes} too small; need at least 8 (6 rigid + 2 flexible)"
        )));
    }
    if n_modes > mesh.n_dofs() {
        return Err(CoreError::InvalidParameter(format!(
            "n_modes {} exceeds model dofs {}",
            n_modes,
            mesh.n_dofs()
        )));
    }
    if !(damping_ratio > 0.0 && damping_ratio < 1.0) {
        return Err(CoreError::InvalidParameter(
            "damping_ratio must lie in (0, 1)".into(),
        ));
    }

    let opts = EigenOptions::default();
    let (lambdas, shapes) = eigen::lowest_eigenpairs(mass, stiffness, mesh, n_modes, &opts)?;
    let frequencies: Vec<f64> = lambdas.iter().map(|l| l.max(0.0).sqrt()).collect();

    // A frequency is rigid if it falls well below the first flexible
    // estimate, taken from the 7th solved mode.
    let reference = frequencies[6.min(n_modes - 1)];
    let threshold = RIGID_THRESHOLD_RATIO * reference;
    let n_rigid = frequencies.iter().take_while(|f| **f < threshold).count();

    // Mass properties from the assembled matrix so attachments are included.
    let n_dofs = mesh.n_dofs();
    let mut ones_w = vec![0.0; n_dofs];
    let mut x_w = vec![0.0; n_dofs];
    let mut y_w = vec![0.0; n_dofs];
    for (node, c) in mesh.node_coords.iter().enumerate() {
        let d = mesh.dof_index(node, 2);
        ones_w[d] = 1.0;
        x_w[d] = c[0];
        y_w[d] = c[1];
    }
    let mut m_ones = vec![0.0; n_dofs];
    mass.mul_vec(&ones_w, &mut m_ones);
    let total_mass: f64 = ones_w.iter().zip(m_ones.iter()).map(|(a, b)| a * b).sum();
    let mx: f64 = x_w.iter().zip(m_ones.iter()).map(|(a, b)| a * b).sum();
    let my: f64 = y_w.iter().zip(m_ones.iter()).map(|(a, b)| a * b).sum();
    let mass_center = [mx / total_mass, my / total_mass];

    Ok(ModalModel {
        frequencies,
        mode_shapes: shapes,
        damping: vec![damping_ratio; n_modes],
        mesh: Arc::new(mesh.clone()),
        n_rigid,
        mass_center,
        total_mass,
    })
}

/// Convenience path: mesh -> assemble -> solve in one call.
pub fn modal_model(
    params: &StageParams,
    stage_edge: f64,
    resolution: usize,
    material: &MaterialSpec,
    attachments: &[LumpedAttachment],
    n_modes: usize,
    damping_ratio: f64,
) -> Result<ModalModel> {
    let mesh = build_mesh(params, stage_edge, resolution)?;
    let (mass, stiffness) = assemble(&mesh, material, attachments)?;
    solve_modes(&mesh, &mass, &stiffness, n_modes, damping_ratio)
}
