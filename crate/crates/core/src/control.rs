//! Fixed-structure loop shaping for one decoupled channel.
//!
//! The controller is a tamed PID with a second-order lowpass,
//!
//! ```text
//! C(s) = K_p * (s + w_int)/s * (s/w_diff + 1) * w_lp^2/(s^2 + 2 z_lp w_lp s + w_lp^2)
//! ```
//!
//! where every corner frequency derives from a single bandwidth target
//! through the ratio alpha: w_int = w_bw/alpha^2, w_diff = w_bw/alpha,
//! w_lp = alpha*w_bw. The gain is set for unit loop magnitude at the target,
//! and the bandwidth search pushes the target up until the closed loop goes
//! unstable or the sensitivity peak 1/|1 + GC| exceeds the robustness bound.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::{
    log_grid, validate_grid, ChannelCoefficients, FrequencyFunction, FrequencyResponse,
};

const TAU: f64 = std::f64::consts::TAU;

/// Default PID frequency ratio between integrator, bandwidth, and lowpass.
pub const DEFAULT_ALPHA: f64 = 3.0;
/// Default lowpass damping ratio.
pub const DEFAULT_LOWPASS_DAMPING: f64 = 0.7;

/// Serial-form controller parameters. The derived corner frequencies are
/// stored so a reported set can be checked against the ratio rules exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub k_p: f64,
    /// Bandwidth target in rad/s; the gain rule places the crossover here.
    pub omega_bw: f64,
    pub alpha: f64,
    /// Integrator corner omega_bw / alpha^2.
    pub omega_int: f64,
    /// Differentiator corner omega_bw / alpha.
    pub omega_diff: f64,
    /// Lowpass corner alpha * omega_bw.
    pub omega_lp: f64,
    pub z_lp: f64,
}

/// Parameters with unit gain; all corner frequencies derive from the target.
pub fn controller_params(omega_bw: f64, alpha: f64, z_lp: f64) -> Result<ControllerParams> {
    if !(omega_bw > 0.0 && omega_bw.is_finite()) {
        return Err(CoreError::InvalidParameter(format!(
            "bandwidth target must be positive, got {omega_bw} rad/s"
        )));
    }
    if !(alpha > 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "frequency ratio alpha must exceed 1 to order integrator < bandwidth < lowpass, \
             got {alpha}"
        )));
    }
    if !(z_lp > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "lowpass damping must be positive, got {z_lp}"
        )));
    }
    Ok(ControllerParams {
        k_p: 1.0,
        omega_bw,
        alpha,
        omega_int: omega_bw / (alpha * alpha),
        omega_diff: omega_bw / alpha,
        omega_lp: alpha * omega_bw,
        z_lp,
    })
}

impl ControllerParams {
    /// (s + w_int)/s at s = j omega.
    pub fn integrator_factor(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0, -self.omega_int / omega)
    }

    /// s/w_diff + 1 at s = j omega.
    pub fn lead_factor(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0, omega / self.omega_diff)
    }

    /// w_lp^2 / (s^2 + 2 z_lp w_lp s + w_lp^2) at s = j omega.
    pub fn lowpass_factor(&self, omega: f64) -> Complex64 {
        let wlp = self.omega_lp;
        Complex64::from(wlp * wlp)
            / Complex64::new(wlp * wlp - omega * omega, 2.0 * self.z_lp * wlp * omega)
    }
}

impl FrequencyFunction for ControllerParams {
    fn eval(&self, omega: f64) -> Complex64 {
        Complex64::from(self.k_p)
            * self.integrator_factor(omega)
            * self.lead_factor(omega)
            * self.lowpass_factor(omega)
    }
}

/// Sampled controller response; the grid must stay off the integrator pole
/// at the origin.
pub fn controller_response(params: &ControllerParams, grid: &[f64]) -> Result<FrequencyResponse> {
    validate_grid(grid)?;
    let values = DMatrix::from_fn(grid.len(), 1, |i, _| params.eval(grid[i]));
    Ok(FrequencyResponse {
        grid: grid.to_vec(),
        values,
        labels: vec!["controller".to_string()],
    })
}

/// Gain placing the crossover at the bandwidth target:
/// K_p = 1 / (|G(j w_bw)| * |C_unit(j w_bw)|), so |L(j w_bw)| = 1.
pub fn tune_gain(plant: &dyn FrequencyFunction, params: &ControllerParams) -> Result<f64> {
    let g = plant.eval(params.omega_bw).norm();
    if !(g > 0.0 && g.is_finite()) {
        return Err(CoreError::InvalidParameter(format!(
            "plant magnitude {g:.3e} at {:.4e} rad/s cannot define a crossover gain",
            params.omega_bw
        )));
    }
    let mut unit = params.clone();
    unit.k_p = 1.0;
    Ok(1.0 / (g * unit.eval(params.omega_bw).norm()))
}

/// Minimal realization, 3 states (integrator plus the two lowpass states),
/// in controllable canonical form. Strictly proper, so no feedthrough:
///
/// ```text
/// C(s) = k (s^2 + (w_int + w_diff) s + w_int w_diff) / (s (s^2 + 2 z_lp w_lp s + w_lp^2)),
/// k = K_p w_lp^2 / w_diff.
/// ```
pub fn controller_state_space(
    params: &ControllerParams,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let (wi, wd, wlp, z) = (
        params.omega_int,
        params.omega_diff,
        params.omega_lp,
        params.z_lp,
    );
    let k = params.k_p * wlp * wlp / wd;
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 1)] = 1.0;
    a[(1, 2)] = 1.0;
    a[(2, 1)] = -wlp * wlp;
    a[(2, 2)] = -2.0 * z * wlp;
    let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let c = DVector::from_vec(vec![k * wi * wd, k * (wi + wd), k]);
    (a, b, c)
}

/// Strict closed-loop stability of the negative-feedback SISO channel
/// u = -C y. The rigid-body poles sit at the origin in open loop and must
/// end strictly inside the left half plane.
pub fn closed_loop_stable(plant: &ChannelCoefficients, params: &ControllerParams) -> bool {
    let (ap, bp, cp) = plant.state_space();
    let (ac, bc, cc) = controller_state_space(params);
    let (np, nc) = (ap.nrows(), ac.nrows());
    let mut a = DMatrix::zeros(np + nc, np + nc);
    a.view_mut((0, 0), (np, np)).copy_from(&ap);
    a.view_mut((np, np), (nc, nc)).copy_from(&ac);
    for i in 0..np {
        for j in 0..nc {
            a[(i, np + j)] = -bp[i] * cc[j];
        }
    }
    for i in 0..nc {
        for j in 0..np {
            a[(np + i, j)] = bc[i] * cp[j];
        }
    }
    let eigs = a.complex_eigenvalues();
    let scale = eigs.iter().fold(1.0f64, |m, e| m.max(e.norm()));
    eigs.iter().all(|e| e.re < -1e-9 * scale)
}

fn sensitivity_at(
    plant: &dyn FrequencyFunction,
    controller: &dyn FrequencyFunction,
    omega: f64,
) -> Result<f64> {
    let l = plant.eval(omega) * controller.eval(omega);
    let distance = (Complex64::ONE + l).norm();
    if distance < 1e-12 {
        return Err(CoreError::SingularLoop {
            omega,
            magnitude: distance,
        });
    }
    Ok(1.0 / distance)
}

/// Peak of |S| = 1/|1 + GC| over the grid under the negative-feedback
/// convention. Every strict local maximum of the sampled response is
/// sharpened by logarithmic refinement until it moves by less than 0.1%;
/// a lightly damped mode carves a spike only a few grid cells wide, and
/// refining the global sample alone would stay on whichever broad hump
/// happened to sample higher.
pub fn sensitivity_peak(
    plant: &dyn FrequencyFunction,
    controller: &dyn FrequencyFunction,
    grid: &[f64],
) -> Result<f64> {
    validate_grid(grid)?;
    let samples: Vec<f64> = grid
        .iter()
        .map(|&omega| sensitivity_at(plant, controller, omega))
        .collect::<Result<_>>()?;
    let n = samples.len();
    let mut best = 0.0f64;
    for i in 0..n {
        let left_ok = i == 0 || samples[i] >= samples[i - 1];
        let right_ok = i == n - 1 || samples[i] >= samples[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        // The true maximizer lies within one grid cell of the sampled one.
        let mut peak = samples[i];
        let mut w_peak = grid[i];
        let mut lo = grid[i.saturating_sub(1)];
        let mut hi = grid[(i + 1).min(n - 1)];
        for _ in 0..60 {
            let subdivisions = 24usize;
            let (la, lb) = (lo.ln(), hi.ln());
            let h = ((lb - la) / subdivisions as f64).max(f64::EPSILON);
            let mut sub_peak = peak;
            let mut sub_w = w_peak;
            for k in 0..=subdivisions {
                let omega = (la + k as f64 * h).exp();
                let s = sensitivity_at(plant, controller, omega)?;
                if s > sub_peak {
                    sub_peak = s;
                    sub_w = omega;
                }
            }
            let change = (sub_peak - peak) / peak;
            peak = sub_peak;
            w_peak = sub_w;
            lo = (w_peak.ln() - h).exp();
            hi = (w_peak.ln() + h).exp();
            if change < 1e-3 {
                break;
            }
        }
        best = best.max(peak);
    }
    Ok(best)
}

/// Loop health at one tuned operating point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopMetrics {
    /// Last downward unity crossing of |GC|.
    pub bandwidth_hz: f64,
    pub max_sensitivity: f64,
    /// Distance to instability under a pure gain change, at the negative
    /// real-axis crossing closest to unity loop gain. None when the locus
    /// never crosses the negative real axis on the grid.
    pub gain_margin_db: Option<f64>,
    pub phase_margin_deg: f64,
    pub stable: bool,
}

fn loop_value(
    plant: &dyn FrequencyFunction,
    controller: &dyn FrequencyFunction,
    omega: f64,
) -> Complex64 {
    plant.eval(omega) * controller.eval(omega)
}

/// First downward unity-gain crossing of |L| on the grid, sharpened by
/// bisection in log frequency. A lightly damped mode above the crossover can
/// lift |L| back over unity; counting the crossing before it keeps the
/// reported bandwidth at the edge of the band the loop actually commands.
fn gain_crossover(
    plant: &dyn FrequencyFunction,
    controller: &dyn FrequencyFunction,
    grid: &[f64],
) -> Result<f64> {
    let mags: Vec<f64> = grid
        .iter()
        .map(|&w| loop_value(plant, controller, w).norm())
        .collect();
    let mut bracket = None;
    for i in 0..grid.len() - 1 {
        if mags[i] >= 1.0 && mags[i + 1] < 1.0 {
            bracket = Some((grid[i], grid[i + 1]));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        CoreError::InvalidParameter(
            "loop gain never crosses unity from above on the evaluation grid".into(),
        )
    })?;
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if loop_value(plant, controller, mid).norm() >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

fn wrap_degrees(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(360.0);
    if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Negative real-axis crossings of the loop locus; returns the gain margin
/// -20 log10 |L| at the crossing whose |L| is closest to 1, the one nearest
/// to instability under a pure gain change.
fn gain_margin_db(
    plant: &dyn FrequencyFunction,
    controller: &dyn FrequencyFunction,
    grid: &[f64],
) -> Option<f64> {
    let values: Vec<Complex64> = grid
        .iter()
        .map(|&w| loop_value(plant, controller, w))
        .collect();
    let mut best: Option<f64> = None;
    for i in 0..grid.len() - 1 {
        let (a, b) = (values[i], values[i + 1]);
        if a.im.signum() == b.im.signum() || (a.re >= 0.0 && b.re >= 0.0) {
            continue;
        }
        let (mut lo, mut hi) = (grid[i], grid[i + 1]);
        let mut im_lo = a.im;
        for _ in 0..80 {
            let mid = (lo * hi).sqrt();
            let lm = loop_value(plant, controller, mid);
            if lm.im.signum() == im_lo.signum() {
                lo = mid;
                im_lo = lm.im;
            } else {
                hi = mid;
            }
        }
        let l = loop_value(plant, controller, (lo * hi).sqrt());
        if l.re < 0.0 {
            let margin = -20.0 * l.norm().log10();
            if best.map_or(true, |b: f64| margin.abs() < b.abs()) {
                best = Some(margin);
            }
        }
    }
    best
}

/// Metrics for a given plant channel and tuned controller over a grid that
/// must span the crossover.
pub fn loop_metrics(
    plant: &ChannelCoefficients,
    params: &ControllerParams,
    grid: &[f64],
) -> Result<LoopMetrics> {
    validate_grid(grid)?;
    let w_c = gain_crossover(plant, params, grid)?;
    let phase_margin_deg = wrap_degrees(180.0 + loop_value(plant, params, w_c).arg().to_degrees());
    Ok(LoopMetrics {
        bandwidth_hz: w_c / TAU,
        max_sensitivity: sensitivity_peak(plant, params, grid)?,
        gain_margin_db: gain_margin_db(plant, params, grid),
        phase_margin_deg,
        stable: closed_loop_stable(plant, params),
    })
}

/// Evaluation grid for one candidate: two decades below the integrator
/// corner up to a decade above the lowpass corner and the highest plant
/// mode, 200 points per decade, plus a linear cluster across each flexible
/// mode's resonance width. The clusters keep Q ~ 1/(2 zeta) spikes, which
/// are far narrower than a log-grid cell, from slipping between samples.
pub fn synthesis_grid(plant: &ChannelCoefficients, params: &ControllerParams) -> Vec<f64> {
    let w_top = plant
        .omegas
        .iter()
        .fold(params.omega_lp, |m, &w| m.max(w));
    let lo = params.omega_int / 100.0;
    let hi = 10.0 * w_top;
    let points = (((hi / lo).log10() * 200.0).ceil() as usize).max(2);
    let mut grid = log_grid(lo / TAU, hi / TAU, points).expect("ordered positive bounds");
    for (m, &w) in plant.omegas.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let half_width = 6.0 * plant.zetas[m].max(1e-6) * w;
        let a = (w - half_width).max(lo);
        let b = w + half_width;
        for k in 0..=32 {
            grid.push(a + (b - a) * k as f64 / 32.0);
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid frequencies"));
    grid.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * b.abs());
    grid
}

/// Search settings for bandwidth maximization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisSettings {
    pub alpha: f64,
    pub z_lp: f64,
    /// Cap on the sensitivity peak; feasibility requires peak <= bound.
    pub robustness_bound: f64,
    /// Search range for the bandwidth target, rad/s.
    pub omega_min: f64,
    pub omega_max: f64,
    /// Relative tolerance on the returned bandwidth.
    pub rel_tol: f64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        SynthesisSettings {
            alpha: DEFAULT_ALPHA,
            z_lp: DEFAULT_LOWPASS_DAMPING,
            robustness_bound: 2.0,
            omega_min: TAU * 1.0,
            omega_max: TAU * 1000.0,
            rel_tol: 0.01,
        }
    }
}

/// Build, tune, and evaluate a single bandwidth candidate without searching.
pub fn synthesize_at(
    plant: &ChannelCoefficients,
    omega_bw: f64,
    settings: &SynthesisSettings,
) -> Result<(ControllerParams, LoopMetrics)> {
    let mut params = controller_params(omega_bw, settings.alpha, settings.z_lp)?;
    params.k_p = tune_gain(plant, &params)?;
    let grid = synthesis_grid(plant, &params);
    let metrics = loop_metrics(plant, &params, &grid)?;
    Ok((params, metrics))
}

enum Candidate {
    Feasible(ControllerParams, LoopMetrics),
    Infeasible(String),
}

fn evaluate_candidate(
    plant: &ChannelCoefficients,
    omega_bw: f64,
    settings: &SynthesisSettings,
) -> Result<Candidate> {
    // Bad settings must surface as hard errors before any loop evaluation.
    controller_params(omega_bw, settings.alpha, settings.z_lp)?;
    match synthesize_at(plant, omega_bw, settings) {
        Ok((_, metrics)) if !metrics.stable => Ok(Candidate::Infeasible(format!(
            "closed loop unstable at bandwidth target {:.4} Hz",
            omega_bw / TAU
        ))),
        Ok((_, metrics)) if metrics.max_sensitivity > settings.robustness_bound => {
            Ok(Candidate::Infeasible(format!(
                "sensitivity peak {:.4} exceeds bound {:.4} at bandwidth target {:.4} Hz",
                metrics.max_sensitivity,
                settings.robustness_bound,
                omega_bw / TAU
            )))
        }
        Ok((params, metrics)) => Ok(Candidate::Feasible(params, metrics)),
        // A singular or never-crossing loop is an infeasible candidate, not
        // a caller error.
        Err(CoreError::SingularLoop { omega, magnitude }) => Ok(Candidate::Infeasible(format!(
            "loop effectively singular at {omega:.4e} rad/s (|1 + L| = {magnitude:.3e})"
        ))),
        Err(CoreError::InvalidParameter(msg)) => Ok(Candidate::Infeasible(msg)),
        Err(other) => Err(other),
    }
}

/// Log-spaced scan density used to locate the working feasible island before
/// bisection sharpens its edge.
const SCAN_POINTS: usize = 25;

/// Largest bandwidth target on the working feasible island, to the settings'
/// relative tolerance. Feasibility = closed-loop stable and sensitivity peak
/// within the robustness bound.
///
/// The feasible set over targets need not be one interval: past the first
/// violated band there can be a detached regime where the loop gain rides
/// over every structural mode and the margins technically recover. A loop is
/// commissioned by growing gain from a safe low-bandwidth point, so targets
/// beyond the first wall are not reachable operating points and the search
/// ignores them. The range is scanned geometrically upward for the first
/// feasible point (the floor itself need not be feasible: a loop wrapped
/// around a lightly damped resonance only closes near or above the modal
/// frequency), the scan continues to the island's last feasible point, and
/// geometric bisection sharpens the edge. Islands narrower than one scan
/// step can be missed.
pub fn maximize_bandwidth(
    plant: &ChannelCoefficients,
    settings: &SynthesisSettings,
) -> Result<(ControllerParams, LoopMetrics)> {
    if !(settings.omega_min > 0.0 && settings.omega_max > settings.omega_min) {
        return Err(CoreError::InvalidParameter(format!(
            "bandwidth search range [{}, {}] rad/s is not ordered and positive",
            settings.omega_min, settings.omega_max
        )));
    }
    if !(settings.robustness_bound >= 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "sensitivity bound {} is below 1, unreachable for a loop with integral action",
            settings.robustness_bound
        )));
    }
    if !(settings.rel_tol > 0.0 && settings.rel_tol < 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "bandwidth tolerance must lie in (0, 1), got {}",
            settings.rel_tol
        )));
    }

    let ratio = settings.omega_max / settings.omega_min;
    let step = ratio.powf(1.0 / (SCAN_POINTS - 1) as f64);
    let scan_omega = |i: usize| {
        if i == SCAN_POINTS - 1 {
            settings.omega_max
        } else {
            settings.omega_min * step.powi(i as i32)
        }
    };

    let mut island: Option<(ControllerParams, LoopMetrics)> = None;
    let mut upper_edge = None;
    let mut floor_criterion = None;
    for i in 0..SCAN_POINTS {
        match evaluate_candidate(plant, scan_omega(i), settings)? {
            Candidate::Feasible(p, m) => island = Some((p, m)),
            Candidate::Infeasible(criterion) => {
                if island.is_some() {
                    upper_edge = Some(scan_omega(i));
                    break;
                }
                floor_criterion.get_or_insert(criterion);
            }
        }
    }
    let (mut best_params, mut best_metrics) = match island {
        Some(f) => f,
        None => {
            return Err(CoreError::InfeasibleBandwidth {
                criterion: floor_criterion.expect("scan visited the range floor"),
            })
        }
    };
    let Some(mut hi) = upper_edge else {
        // Feasible all the way up: the cap itself is the answer.
        return Ok((best_params, best_metrics));
    };

    let mut lo = best_params.omega_bw;
    while hi / lo > 1.0 + settings.rel_tol {
        let mid = (lo * hi).sqrt();
        match evaluate_candidate(plant, mid, settings)? {
            Candidate::Feasible(p, m) => {
                lo = mid;
                best_params = p;
                best_metrics = m;
            }
            Candidate::Infeasible(_) => hi = mid,
        }
    }
    Ok((best_params, best_metrics))
}
