//! Modal state-space plant assembly, static decoupling transforms, and
//! frequency-response evaluation of the decoupled channels.
//!
//! The plant maps physical actuator channels to physical sensor readings by
//! modal superposition. A measurement-decoupling map converts readings to
//! generalized coordinates (6 rigid motions about the mass center plus the
//! controlled flexible coordinates) and an actuation-recoupling map converts
//! generalized force commands back to actuator channels, leaving one SISO
//! loop per generalized coordinate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fem::{rigid_body_fields, ModalModel};

/// Block-diagonal modal dynamics restricted to an explicit mode selection.
/// Rigid modes carry omega = 0 exactly and no damping (double integrators);
/// flexible modes are strictly stable second-order sections.
#[derive(Clone, Debug)]
pub struct ModalStateSpace {
    /// Natural frequencies of the selected modes, rad/s; rigid entries 0.
    pub omegas: Vec<f64>,
    pub zetas: Vec<f64>,
    /// Modal force gains, one row per selected mode over actuator channels.
    pub modal_input: DMatrix<f64>,
    /// Modal readings, one column per selected mode over sensor channels.
    pub modal_output: DMatrix<f64>,
    /// Indices into the source model, strictly increasing.
    pub selected: Vec<usize>,
    pub n_rigid: usize,
}

impl ModalStateSpace {
    pub fn n_inputs(&self) -> usize {
        self.modal_input.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.modal_output.nrows()
    }

    fn denominator(&self, m: usize, omega: f64) -> Complex64 {
        let w = self.omegas[m];
        let z = self.zetas[m];
        Complex64::new(w * w - omega * omega, 2.0 * z * w * omega)
    }

    /// Raw transfer matrix u -> y at one frequency (rad/s).
    pub fn response(&self, omega: f64) -> DMatrix<Complex64> {
        let mut g = DMatrix::from_element(self.n_outputs(), self.n_inputs(), Complex64::ZERO);
        for m in 0..self.omegas.len() {
            let inv = self.denominator(m, omega).inv();
            for r in 0..self.n_outputs() {
                let cr = self.modal_output[(r, m)];
                if cr == 0.0 {
                    continue;
                }
                for c in 0..self.n_inputs() {
                    g[(r, c)] += inv * (cr * self.modal_input[(m, c)]);
                }
            }
        }
        g
    }
}

/// Truncates the modal model to `selection` and attaches the device
/// matrices. The selection must include every rigid mode: rigid-body motion
/// is always controlled and silently dropping it would be an error the
/// decoupling stage could not detect.
pub fn build_plant(
    model: &ModalModel,
    b_a: &DMatrix<f64>,
    c_s: &DMatrix<f64>,
    selection: &[usize],
) -> Result<ModalStateSpace> {
    let n_dofs = model.mesh.n_dofs();
    if b_a.nrows() != n_dofs || c_s.ncols() != n_dofs {
        return Err(CoreError::InvalidParameter(format!(
            "device matrices sized {}x{} and {}x{} do not match {} mesh dofs",
            b_a.nrows(),
            b_a.ncols(),
            c_s.nrows(),
            c_s.ncols(),
            n_dofs
        )));
    }
    if selection.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::InvalidParameter(
            "mode selection must be strictly increasing".into(),
        ));
    }
    if selection.last().is_some_and(|&m| m >= model.n_modes()) {
        return Err(CoreError::InvalidParameter(format!(
            "mode selection exceeds the {} solved modes",
            model.n_modes()
        )));
    }
    let rigid_included = (0..model.n_rigid).all(|r| selection.contains(&r));
    if !rigid_included {
        return Err(CoreError::InvalidParameter(format!(
            "mode selection must include all {} rigid modes",
            model.n_rigid
        )));
    }

    let n_sel = selection.len();
    let mut omegas = Vec::with_capacity(n_sel);
    let mut zetas = Vec::with_capacity(n_sel);
    let mut modal_input = DMatrix::zeros(n_sel, b_a.ncols());
    let mut modal_output = DMatrix::zeros(c_s.nrows(), n_sel);
    for (slot, &m) in selection.iter().enumerate() {
        let rigid = m < model.n_rigid;
        omegas.push(if rigid { 0.0 } else { model.frequencies[m] });
        zetas.push(if rigid { 0.0 } else { model.damping[m] });
        let phi = model.mode_shapes.column(m);
        for c in 0..b_a.ncols() {
            modal_input[(slot, c)] = b_a.column(c).dot(&phi);
        }
        for r in 0..c_s.nrows() {
            modal_output[(r, slot)] = c_s.row(r).transpose().dot(&phi);
        }
    }
    Ok(ModalStateSpace {
        omegas,
        zetas,
        modal_input,
        modal_output,
        selected: selection.to_vec(),
        n_rigid: model.n_rigid,
    })
}

/// Names of the generalized coordinates: rigid motions about the mass
/// center, then the controlled flexible coordinates.
pub fn channel_label(k: usize) -> String {
    match k {
        0 => "x".into(),
        1 => "y".into(),
        2 => "z".into(),
        3 => "rx".into(),
        4 => "ry".into(),
        5 => "rz".into(),
        _ => format!("flex{}", k - 5),
    }
}

/// Which side of the matrix carries the generalized coordinates, for naming
/// the direction that collapsed on rank failure.
enum CoordinateSide {
    Columns,
    Rows,
}

fn pseudo_inverse_checked(
    a: &DMatrix<f64>,
    context: &str,
    side: CoordinateSide,
) -> Result<(DMatrix<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[svd.singular_values.len() - 1];
    if !(smin > 1e-10 * smax) {
        // The singular vector of the smallest singular value, taken on the
        // coordinate side, spans the unobservable/undrivable direction.
        let last = svd.singular_values.len() - 1;
        let weak: Vec<f64> = match side {
            CoordinateSide::Columns => {
                let vt = svd.v_t.as_ref().expect("svd computed with vectors");
                vt.row(last).iter().copied().collect()
            }
            CoordinateSide::Rows => {
                let u = svd.u.as_ref().expect("svd computed with vectors");
                u.column(last).iter().copied().collect()
            }
        };
        let mut idx = 0;
        let mut best = -1.0;
        for (i, v) in weak.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        return Err(CoreError::RankDeficient {
            context: context.into(),
            direction: channel_label(idx),
        });
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| CoreError::InvalidParameter(format!("{context}: {e}")))?;
    Ok((pinv, smax / smin))
}

/// Sensor map over the generalized coordinates: column j holds the sensor
/// readings produced by a unit motion of coordinate j.
fn sensor_map(model: &ModalModel, c_s: &DMatrix<f64>, n_controlled: usize) -> Result<DMatrix<f64>> {
    if model.n_modes() < model.n_rigid + n_controlled {
        return Err(CoreError::InvalidParameter(format!(
            "model carries {} flexible modes, decoupling needs {n_controlled}",
            model.n_modes() - model.n_rigid
        )));
    }
    let rigid = rigid_body_fields(&model.mesh, model.mass_center);
    let n_y = c_s.nrows();
    let mut a_y = DMatrix::zeros(n_y, 6 + n_controlled);
    let rigid_readings = c_s * &rigid;
    a_y.view_mut((0, 0), (n_y, 6)).copy_from(&rigid_readings);
    for k in 0..n_controlled {
        let phi = model.mode_shapes.column(model.n_rigid + k);
        for r in 0..n_y {
            a_y[(r, 6 + k)] = c_s.row(r).transpose().dot(&phi);
        }
    }
    Ok(a_y)
}

/// Readings-to-coordinates transform: the pseudoinverse of the sensor map.
/// Returns the transform and the sensor map's condition number.
pub fn measurement_decoupling(
    model: &ModalModel,
    c_s: &DMatrix<f64>,
    n_controlled: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let a_y = sensor_map(model, c_s, n_controlled)?;
    if a_y.nrows() < a_y.ncols() {
        return Err(CoreError::InvalidParameter(format!(
            "{} sensor channels cannot observe {} generalized coordinates",
            a_y.nrows(),
            a_y.ncols()
        )));
    }
    pseudo_inverse_checked(&a_y, "sensor map", CoordinateSide::Columns)
}

/// Generalized-force allocation: row j of the map holds each actuator
/// channel's contribution to coordinate j; the transform is its minimum-
/// norm right inverse.
pub fn actuation_recoupling(
    model: &ModalModel,
    b_a: &DMatrix<f64>,
    n_controlled: usize,
) -> Result<(DMatrix<f64>, f64)> {
    if model.n_modes() < model.n_rigid + n_controlled {
        return Err(CoreError::InvalidParameter(format!(
            "model carries {} flexible modes, decoupling needs {n_controlled}",
            model.n_modes() - model.n_rigid
        )));
    }
    let rigid = rigid_body_fields(&model.mesh, model.mass_center);
    let n_u = b_a.ncols();
    let mut a_u = DMatrix::zeros(6 + n_controlled, n_u);
    let rigid_forces = rigid.transpose() * b_a;
    a_u.view_mut((0, 0), (6, n_u)).copy_from(&rigid_forces);
    for k in 0..n_controlled {
        let phi = model.mode_shapes.column(model.n_rigid + k);
        for c in 0..n_u {
            a_u[(6 + k, c)] = b_a.column(c).dot(&phi);
        }
    }
    if a_u.ncols() < a_u.nrows() {
        return Err(CoreError::InvalidParameter(format!(
            "{} actuator channels cannot drive {} generalized coordinates",
            a_u.ncols(),
            a_u.nrows()
        )));
    }
    pseudo_inverse_checked(&a_u, "force allocation", CoordinateSide::Rows)
}

/// Both static transforms of the decoupled architecture.
#[derive(Clone, Debug)]
pub struct DecouplingPair {
    /// (6 + n) x n_y readings-to-coordinates map.
    pub t_meas: DMatrix<f64>,
    /// n_u x (6 + n) coordinates-to-channels map.
    pub t_act: DMatrix<f64>,
    pub meas_condition: f64,
    pub act_condition: f64,
    pub n_controlled: usize,
}

impl DecouplingPair {
    pub fn new(
        model: &ModalModel,
        b_a: &DMatrix<f64>,
        c_s: &DMatrix<f64>,
        n_controlled: usize,
    ) -> Result<Self> {
        let (t_meas, meas_condition) = measurement_decoupling(model, c_s, n_controlled)?;
        let (t_act, act_condition) = actuation_recoupling(model, b_a, n_controlled)?;
        Ok(DecouplingPair {
            t_meas,
            t_act,
            meas_condition,
            act_condition,
            n_controlled,
        })
    }

    pub fn n_channels(&self) -> usize {
        6 + self.n_controlled
    }
}

/// Frequency response samples over a logarithmic grid.
#[derive(Clone, Debug)]
pub struct FrequencyResponse {
    /// rad/s, strictly increasing, starting above zero.
    pub grid: Vec<f64>,
    /// One row per grid point, one column per labeled channel.
    pub values: DMatrix<Complex64>,
    pub labels: Vec<String>,
}

/// Logarithmic grid in rad/s between two positive frequencies in Hz.
pub fn log_grid(f_lo_hz: f64, f_hi_hz: f64, points: usize) -> Result<Vec<f64>> {
    if !(f_lo_hz > 0.0 && f_hi_hz > f_lo_hz) {
        return Err(CoreError::InvalidParameter(format!(
            "need 0 < f_lo < f_hi, got [{f_lo_hz}, {f_hi_hz}] Hz"
        )));
    }
    if points < 2 {
        return Err(CoreError::InvalidParameter(
            "frequency grid needs at least 2 points".into(),
        ));
    }
    let (a, b) = (f_lo_hz.ln(), f_hi_hz.ln());
    Ok((0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            std::f64::consts::TAU * (a + t * (b - a)).exp()
        })
        .collect())
}

/// Default evaluation grid: 400 points over 0.1 Hz to 5 kHz, spanning the
/// rigid-body rolloff through the flexible modes with margin.
pub fn default_grid() -> Vec<f64> {
    log_grid(0.1, 5000.0, 400).expect("static bounds")
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "frequency grid must start above zero".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::InvalidParameter(
            "frequency grid must increase strictly".into(),
        ));
    }
    Ok(())
}

/// Modal decomposition of one diagonal decoupled channel: the channel value
/// is sum over modes of gain_out * gain_in / (w^2 - omega^2 + 2j z w omega).
/// Evaluable at arbitrary frequencies, unlike the sampled responses.
#[derive(Clone, Debug)]
pub struct ChannelCoefficients {
    pub omegas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub gains_in: Vec<f64>,
    pub gains_out: Vec<f64>,
    pub label: String,
}

/// Anything evaluable as a scalar transfer function on the imaginary axis.
pub trait FrequencyFunction {
    fn eval(&self, omega: f64) -> Complex64;
}

impl FrequencyFunction for ChannelCoefficients {
    fn eval(&self, omega: f64) -> Complex64 {
        let mut g = Complex64::ZERO;
        for m in 0..self.omegas.len() {
            let w = self.omegas[m];
            let den = Complex64::new(w * w - omega * omega, 2.0 * self.zetas[m] * w * omega);
            g += Complex64::from(self.gains_out[m] * self.gains_in[m]) / den;
        }
        g
    }
}

impl ChannelCoefficients {
    /// Controllable-canonical per-mode realization: states (q_m, dq_m),
    /// output summed over modes.
    pub fn state_space(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = 2 * self.omegas.len();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        for m in 0..self.omegas.len() {
            let w = self.omegas[m];
            a[(2 * m, 2 * m + 1)] = 1.0;
            a[(2 * m + 1, 2 * m)] = -w * w;
            a[(2 * m + 1, 2 * m + 1)] = -2.0 * self.zetas[m] * w;
            b[2 * m + 1] = self.gains_in[m];
            c[2 * m] = self.gains_out[m];
        }
        (a, b, c)
    }
}

/// Modal coefficients of diagonal channel k of T_meas * P * T_act.
///
/// Rigid modes all sit at omega = 0, so the eigensolver returns an arbitrary
/// basis of that eigenspace and per-mode gains there carry no meaning; only
/// the summed in-out product is basis-invariant. The rigid block therefore
/// collapses into a single double integrator. Flexible channels drop it
/// outright: their rigid content is residue of the exact decoupling
/// identities, and realizing it would add phantom marginal poles that no
/// SISO loop on that channel could move.
pub fn channel_coefficients(
    plant: &ModalStateSpace,
    pair: &DecouplingPair,
    k: usize,
) -> Result<ChannelCoefficients> {
    if k >= pair.n_channels() {
        return Err(CoreError::InvalidParameter(format!(
            "channel {k} out of range ({} decoupled channels)",
            pair.n_channels()
        )));
    }
    if pair.t_meas.ncols() != plant.n_outputs() || pair.t_act.nrows() != plant.n_inputs() {
        return Err(CoreError::InvalidParameter(
            "decoupling transforms do not match the plant's channel counts".into(),
        ));
    }
    let gains_at = |m: usize| -> (f64, f64) {
        let out_m = pair.t_meas.row(k).transpose().dot(&plant.modal_output.column(m));
        let in_m = plant.modal_input.row(m).transpose().dot(&pair.t_act.column(k));
        (in_m, out_m)
    };
    // Rigid modes occupy the leading slots: the selection is strictly
    // increasing and build_plant requires it to contain them all.
    let n_rigid = plant.n_rigid.min(plant.omegas.len());
    let n_modes = plant.omegas.len();
    let mut omegas = Vec::with_capacity(n_modes + 1 - n_rigid);
    let mut zetas = Vec::with_capacity(n_modes + 1 - n_rigid);
    let mut gains_in = Vec::with_capacity(n_modes + 1 - n_rigid);
    let mut gains_out = Vec::with_capacity(n_modes + 1 - n_rigid);
    if k < 6 && n_rigid > 0 {
        let rigid_product: f64 = (0..n_rigid)
            .map(|m| {
                let (in_m, out_m) = gains_at(m);
                in_m * out_m
            })
            .sum();
        omegas.push(0.0);
        zetas.push(0.0);
        gains_in.push(rigid_product);
        gains_out.push(1.0);
    }
    for m in n_rigid..n_modes {
        let (in_m, out_m) = gains_at(m);
        omegas.push(plant.omegas[m]);
        zetas.push(plant.zetas[m]);
        gains_in.push(in_m);
        gains_out.push(out_m);
    }
    Ok(ChannelCoefficients {
        omegas,
        zetas,
        gains_in,
        gains_out,
        label: channel_label(k),
    })
}

/// Full decoupled transfer matrices at each grid frequency, for
/// cross-coupling inspection.
pub fn decoupled_response_matrix(
    plant: &ModalStateSpace,
    pair: &DecouplingPair,
    grid: &[f64],
) -> Result<Vec<DMatrix<Complex64>>> {
    validate_grid(grid)?;
    if pair.t_meas.ncols() != plant.n_outputs() || pair.t_act.nrows() != plant.n_inputs() {
        return Err(CoreError::InvalidParameter(
            "decoupling transforms do not match the plant's channel counts".into(),
        ));
    }
    let nch = pair.n_channels();
    let n_modes = plant.omegas.len();
    // Project the modal gains once; each frequency is then a scaled sum of
    // rank-one blocks in the small decoupled space.
    let mut outs = DMatrix::zeros(nch, n_modes);
    let mut ins = DMatrix::zeros(n_modes, nch);
    for m in 0..n_modes {
        for k in 0..nch {
            outs[(k, m)] = pair.t_meas.row(k).transpose().dot(&plant.modal_output.column(m));
            ins[(m, k)] = plant.modal_input.row(m).transpose().dot(&pair.t_act.column(k));
        }
    }
    let mut result = Vec::with_capacity(grid.len());
    for &omega in grid {
        let mut g = DMatrix::from_element(nch, nch, Complex64::ZERO);
        for m in 0..n_modes {
            let inv = plant.denominator(m, omega).inv();
            for r in 0..nch {
                let o = outs[(r, m)];
                if o == 0.0 {
                    continue;
                }
                for c in 0..nch {
                    g[(r, c)] += inv * (o * ins[(m, c)]);
                }
            }
        }
        result.push(g);
    }
    Ok(result)
}

/// Sampled response of one diagonal decoupled channel.
pub fn decoupled_channel_response(
    plant: &ModalStateSpace,
    pair: &DecouplingPair,
    k: usize,
    grid: &[f64],
) -> Result<FrequencyResponse> {
    validate_grid(grid)?;
    let coeffs = channel_coefficients(plant, pair, k)?;
    let mut values = DMatrix::from_element(grid.len(), 1, Complex64::ZERO);
    for (i, &omega) in grid.iter().enumerate() {
        values[(i, 0)] = coeffs.eval(omega);
    }
    Ok(FrequencyResponse {
        grid: grid.to_vec(),
        values,
        labels: vec![coeffs.label.clone()],
    })
}
