//! Derivative-free constrained minimization by linear approximation: a
//! trust-region scheme over a nondegenerate interpolation simplex in the
//! style of Powell's COBYLA.
//!
//! Objective and constraints are modeled by the linear interpolants through
//! the simplex vertices; each step solves the linearized subproblem on a
//! merit function (objective plus an adaptive penalty on the worst
//! constraint violation) inside a shrinking trust region. Box bounds enter
//! as ordinary linear constraints, which the linear models capture exactly.

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

/// Componentwise box for the decision vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(CoreError::InvalidParameter(
                "bound vectors differ in length".into(),
            ));
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(CoreError::InvalidParameter(format!(
                    "invalid bound pair [{l}, {u}]"
                )));
            }
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(self.upper.iter())) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Trust-region schedule. Radii are in the units of the decision vector, so
/// callers optimizing normalized variables pass normalized radii.
#[derive(Clone, Copy, Debug)]
pub struct CobylaSettings {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evaluations: usize,
}

impl Default for CobylaSettings {
    fn default() -> Self {
        CobylaSettings {
            rho_begin: 0.1,
            rho_end: 1e-4,
            max_evaluations: 400,
        }
    }
}

impl CobylaSettings {
    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.rho_end > 0.0 && self.rho_end < self.rho_begin) {
            return Err(CoreError::InvalidParameter(
                "need 0 < rho_end < rho_begin".into(),
            ));
        }
        if self.max_evaluations < dim + 2 {
            return Err(CoreError::InvalidParameter(format!(
                "max_evaluations {} below dimension + 2",
                self.max_evaluations
            )));
        }
        Ok(())
    }
}

/// One recorded evaluation.
#[derive(Clone, Debug)]
pub struct HistoryEntry {
    pub point: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub best_point: Vec<f64>,
    pub best_objective: f64,
    /// User constraint values at best_point (>= 0 means satisfied).
    pub constraint_values: Vec<f64>,
    pub evaluations_used: usize,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
}

/// Best-point ordering: any feasible point beats any infeasible one; among
/// feasible points lower objective wins; among infeasible points lower worst
/// violation wins.
fn merit_better(viol_a: f64, f_a: f64, viol_b: f64, f_b: f64) -> bool {
    if viol_a != viol_b {
        return viol_a < viol_b;
    }
    f_a < f_b
}

fn max_violation(c: &[f64]) -> f64 {
    c.iter().fold(0.0f64, |acc, v| acc.max(-v))
}

/// Interior-point solve of: minimize cᵀz subject to rows[j].0 · z +
/// rows[j].1 >= 0 and |z[0..ball_dim]| <= rho, from a strictly feasible z0.
///
/// Small and dense by design: the outer method only ever builds systems of
/// dimension n + 1 with a few dozen constraints.
fn barrier_minimize(
    c: &DVector<f64>,
    rows: &[(DVector<f64>, f64)],
    ball_dim: usize,
    rho: f64,
    z0: DVector<f64>,
) -> DVector<f64> {
    let k = c.len();
    let mut z = z0;
    let cscale = 1.0 / c.amax().max(1.0);
    let c = c * cscale;
    let total = rows.len() as f64 + 1.0;

    let slack = |z: &DVector<f64>, j: usize| -> f64 {
        let (a, b) = &rows[j];
        a.dot(z) + b
    };
    let ball_slack = |z: &DVector<f64>| -> f64 {
        let d2: f64 = (0..ball_dim).map(|i| z[i] * z[i]).sum();
        rho * rho - d2
    };
    let barrier_value = |z: &DVector<f64>, kappa: f64| -> f64 {
        let mut v = kappa * c.dot(z);
        for j in 0..rows.len() {
            let s = slack(z, j);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            v -= s.ln();
        }
        let sb = ball_slack(z);
        if sb <= 0.0 {
            return f64::INFINITY;
        }
        v - sb.ln()
    };

    let mut kappa = 1.0;
    while kappa * 1e-9 < total {
        for _newton in 0..50 {
            let mut grad = kappa * &c;
            let mut hess = DMatrix::zeros(k, k);
            for (a, b) in rows {
                let s = a.dot(&z) + b;
                grad -= a / s;
                hess.ger(1.0 / (s * s), a, a, 1.0);
            }
            let sb = ball_slack(&z);
            for i in 0..ball_dim {
                grad[i] += 2.0 * z[i] / sb;
                hess[(i, i)] += 2.0 / sb;
                for j in 0..ball_dim {
                    hess[(i, j)] += 4.0 * z[i] * z[j] / (sb * sb);
                }
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => break,
            };
            let decrement = grad.dot(&step).abs();
            // Largest multiple of the step keeping every slack positive.
            let mut alpha: f64 = 1.0;
            for (a, b) in rows {
                let ds = a.dot(&step);
                if ds < 0.0 {
                    let s = a.dot(&z) + b;
                    alpha = alpha.min(-0.99 * s / ds);
                }
            }
            let base = barrier_value(&z, kappa);
            let mut accepted = false;
            for _bt in 0..40 {
                let cand = &z + alpha * &step;
                if barrier_value(&cand, kappa) < base {
                    z = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted || decrement < 1e-12 * (1.0 + kappa) {
                break;
            }
        }
        kappa *= 8.0;
    }
    z
}

/// Linearized trust-region step on the merit function: minimize
/// g_fᵀd + mu*t with t >= 0, b_j + g_jᵀd + t >= 0, |d| <= rho.
fn merit_step(
    gf: &DVector<f64>,
    gc: &DMatrix<f64>,
    b: &[f64],
    mu: f64,
    rho: f64,
) -> DVector<f64> {
    let n = gf.len();
    let m = b.len();
    let mut c = DVector::zeros(n + 1);
    c.rows_mut(0, n).copy_from(gf);
    c[n] = mu;
    let mut rows = Vec::with_capacity(m + 1);
    for j in 0..m {
        let mut a = DVector::zeros(n + 1);
        for i in 0..n {
            a[i] = gc[(j, i)];
        }
        a[n] = 1.0;
        rows.push((a, b[j]));
    }
    let mut at = DVector::zeros(n + 1);
    at[n] = 1.0;
    rows.push((at, 0.0));

    let worst = b.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut z0 = DVector::zeros(n + 1);
    z0[n] = (-worst).max(0.0) + 1.0;
    let z = barrier_minimize(&c, &rows, n, rho, z0);
    z.rows(0, n).clone_owned()
}

/// Pure feasibility step: maximize the worst linearized constraint margin
/// inside the trust region. Used to judge whether the penalty is large
/// enough that the merit step still pursues feasibility.
fn feasibility_step(gc: &DMatrix<f64>, b: &[f64], rho: f64) -> DVector<f64> {
    let n = gc.ncols();
    let m = b.len();
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let mut rows = Vec::with_capacity(m);
    for j in 0..m {
        let mut a = DVector::zeros(n + 1);
        for i in 0..n {
            a[i] = gc[(j, i)];
        }
        a[n] = -1.0;
        rows.push((a, b[j]));
    }
    let worst = b.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut z0 = DVector::zeros(n + 1);
    z0[n] = worst - 1.0;
    let z = barrier_minimize(&c, &rows, n, rho, z0);
    z.rows(0, n).clone_owned()
}

struct Evaluator<'a, 'b> {
    objective: &'a mut dyn FnMut(&[f64]) -> f64,
    constraints: &'a mut [Box<dyn FnMut(&[f64]) -> f64 + 'b>],
    bounds: &'a BoxBounds,
    history: Vec<HistoryEntry>,
    best: Option<(Vec<f64>, f64, Vec<f64>, f64)>,
}

impl<'a, 'b> Evaluator<'a, 'b> {
    /// Evaluates f and the full constraint stack (user rows then box rows)
    /// at x clamped into the box. Returns (x_used, f, c_all).
    fn eval(&mut self, x: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let mut xc = x.to_vec();
        self.bounds.clamp(&mut xc);
        let f = (self.objective)(&xc);
        let n_user = self.constraints.len();
        let n = xc.len();
        let mut c = Vec::with_capacity(n_user + 2 * n);
        for g in self.constraints.iter_mut() {
            c.push(g(&xc));
        }
        for i in 0..n {
            c.push(xc[i] - self.bounds.lower[i]);
        }
        for i in 0..n {
            c.push(self.bounds.upper[i] - xc[i]);
        }
        let viol = max_violation(&c);
        self.history.push(HistoryEntry {
            point: xc.clone(),
            objective: f,
            max_violation: viol,
        });
        let user_vals = c[..n_user].to_vec();
        let better = match &self.best {
            None => true,
            Some((_, bf, _, bviol)) => merit_better(viol, f, *bviol, *bf),
        };
        if better {
            self.best = Some((xc.clone(), f, user_vals, viol));
        }
        (xc, f, c)
    }

    fn used(&self) -> usize {
        self.history.len()
    }
}

/// Minimizes the objective subject to constraints(x) >= 0 and box bounds.
pub fn cobyla_minimize(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    constraints: &mut [Box<dyn FnMut(&[f64]) -> f64 + '_>],
    x0: &[f64],
    bounds: &BoxBounds,
    settings: &CobylaSettings,
) -> Result<OptimizationResult> {
    let n = x0.len();
    if n == 0 || bounds.dim() != n {
        return Err(CoreError::InvalidParameter(
            "empty decision vector or mismatched bounds".into(),
        ));
    }
    settings.validate(n)?;
    if !bounds.contains(x0) {
        return Err(CoreError::InvalidParameter(
            "initial point outside box bounds".into(),
        ));
    }
    for i in 0..n {
        if bounds.upper[i] - bounds.lower[i] <= 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "variable {i} is pinned by its bounds; remove it instead"
            )));
        }
    }

    let mut ev = Evaluator {
        objective,
        constraints,
        bounds,
        history: Vec::new(),
        best: None,
    };

    // Initial simplex: x0 plus coordinate steps of rho_begin, flipped where
    // the box would be crossed.
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut fs: Vec<f64> = Vec::with_capacity(n + 1);
    let mut cs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let (x_used, f0, c0) = ev.eval(x0);
    pts.push(x_used);
    fs.push(f0);
    cs.push(c0);
    for i in 0..n {
        let mut xi = pts[0].clone();
        let step = settings
            .rho_begin
            .min(0.5 * (bounds.upper[i] - bounds.lower[i]));
        if xi[i] + step <= bounds.upper[i] {
            xi[i] += step;
        } else {
            xi[i] -= step;
        }
        let (xu, f, c) = ev.eval(&xi);
        pts.push(xu);
        fs.push(f);
        cs.push(c);
    }

    let mut rho = settings.rho_begin;
    let mut mu: f64 = 0.0;
    let mut geometry_fails = 0usize;
    let mut ratio_fails = 0usize;
    let mut converged = false;
    // Consecutive ratio-test failures tolerated before the radius shrinks;
    // near a curved active constraint the endgame walks tangentially in
    // many small successful steps and must not be cut short.
    const FAIL_PATIENCE: usize = 3;

    while ev.used() < settings.max_evaluations {
        // Keep the merit-best vertex at index 0. The penalty is first raised
        // until the lexicographic best (violation, objective) also minimizes
        // the merit, which is Powell's consistency requirement on mu.
        let viols: Vec<f64> = cs.iter().map(|c| max_violation(c)).collect();
        let mut lex = 0;
        for j in 1..=n {
            if merit_better(viols[j], fs[j], viols[lex], fs[lex]) {
                lex = j;
            }
        }
        for j in 0..=n {
            if viols[j] > viols[lex] && fs[j] < fs[lex] {
                let need = (fs[lex] - fs[j]) / (viols[j] - viols[lex]);
                if need > mu {
                    mu = 1.5 * need;
                }
            }
        }
        let merit = |j: usize| fs[j] + mu * viols[j];
        let mut best = 0;
        for j in 1..=n {
            if merit(j) < merit(best) || (merit(j) == merit(best) && viols[j] < viols[best]) {
                best = j;
            }
        }
        if best != 0 {
            pts.swap(0, best);
            fs.swap(0, best);
            cs.swap(0, best);
        }

        // Edge matrix and simplex quality.
        let s = DMatrix::from_fn(n, n, |r, c| pts[c + 1][r] - pts[0][r]);
        let dists: Vec<f64> = (1..=n)
            .map(|j| {
                (0..n)
                    .map(|r| (pts[j][r] - pts[0][r]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let svd = s.clone().svd(true, true);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let far = dists
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 2.1 * rho)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j + 1);
        let acceptable = far.is_none() && smin >= 0.25 * rho;

        if !acceptable {
            geometry_fails += 1;
            if geometry_fails > 10 * (n + 1) {
                return Err(CoreError::SimplexDegenerate {
                    evaluations: ev.used(),
                });
            }
            // Replace the offending vertex with a point at distance rho/2
            // from the best vertex, normal to the face of the others.
            let drop_j = far.unwrap_or_else(|| {
                // Vertex most aligned with the weakest direction of S.
                let v = svd.v_t.as_ref().unwrap().row(n - 1).clone_owned();
                let mut jmax = 1;
                let mut vmax = 0.0;
                for j in 0..n {
                    if v[j].abs() > vmax {
                        vmax = v[j].abs();
                        jmax = j + 1;
                    }
                }
                jmax
            });
            let mut face = DMatrix::zeros(n, n - 1);
            let mut col = 0;
            for j in 1..=n {
                if j != drop_j {
                    for r in 0..n {
                        face[(r, col)] = pts[j][r] - pts[0][r];
                    }
                    col += 1;
                }
            }
            let normal = face_normal(&face);
            // Sign pointing to lower modeled merit when a model is at hand;
            // fall back to the positive orientation.
            let mut dir = normal.clone();
            if let Some((gf, gcm)) = linear_models(&s, &fs, &cs) {
                let down = predicted_merit(&gf, &gcm, &cs[0], mu, &(-&normal));
                let up = predicted_merit(&gf, &gcm, &cs[0], mu, &normal);
                if down < up {
                    dir = -normal;
                }
            }
            // The box can truncate the step to nothing at a face or corner;
            // keep whichever orientation survives clamping, else step toward
            // the box center along the roomiest coordinate.
            let place = |d: &DVector<f64>| -> (Vec<f64>, f64) {
                let mut x = pts[0].clone();
                for r in 0..n {
                    x[r] += 0.5 * rho * d[r];
                }
                bounds.clamp(&mut x);
                let len = (0..n)
                    .map(|r| (x[r] - pts[0][r]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (x, len)
            };
            let (mut xnew, mut len) = place(&dir);
            if len < 0.25 * rho {
                let (xflip, lflip) = place(&(-&dir));
                if lflip > len {
                    xnew = xflip;
                    len = lflip;
                }
            }
            if len < 0.25 * rho {
                let mut axis = 0;
                let mut room = -1.0;
                for r in 0..n {
                    let gap = 0.5 * (bounds.lower[r] + bounds.upper[r]) - pts[0][r];
                    if gap.abs() > room {
                        room = gap.abs();
                        axis = r;
                    }
                }
                xnew = pts[0].clone();
                let gap = 0.5 * (bounds.lower[axis] + bounds.upper[axis]) - pts[0][axis];
                xnew[axis] += gap.signum() * (0.5 * rho).min(gap.abs());
            }
            let (xu, f, c) = ev.eval(&xnew);
            pts[drop_j] = xu;
            fs[drop_j] = f;
            cs[drop_j] = c;
            continue;
        }
        geometry_fails = 0;

        let Some((gf, gcm)) = linear_models(&s, &fs, &cs) else {
            return Err(CoreError::SimplexDegenerate {
                evaluations: ev.used(),
            });
        };
        let b = &cs[0];

        // Penalty sizing: the merit step must pursue at least a fraction of
        // the violation reduction a pure feasibility step could achieve.
        let viol0 = max_violation(b);
        let mut d = merit_step(&gf, &gcm, b, mu, rho);
        if viol0 > 0.0 {
            let dfeas = feasibility_step(&gcm, b, rho);
            let vbest = predicted_violation(&gcm, b, &dfeas);
            for _ in 0..10 {
                let vpred = predicted_violation(&gcm, b, &d);
                if vpred <= vbest + 0.5 * (viol0 - vbest).max(0.0) {
                    break;
                }
                mu = (2.0 * mu).max(1.0);
                d = merit_step(&gf, &gcm, b, mu, rho);
            }
        }

        // Predicted merit reduction of the linearized step; a vanishing
        // prediction means the models see nothing left at this radius.
        let pred_red = -gf.dot(&d) + mu * (viol0 - predicted_violation(&gcm, b, &d));
        let dnorm = d.norm();
        if dnorm < 0.5 * rho || pred_red <= 1e-13 * (1.0 + fs[0].abs()) {
            if rho <= settings.rho_end * 1.000001 {
                converged = true;
                break;
            }
            rho = (0.5 * rho).max(settings.rho_end);
            ratio_fails = 0;
            continue;
        }

        let mut xnew = pts[0].clone();
        for r in 0..n {
            xnew[r] += d[r];
        }
        let (xu, f, c) = ev.eval(&xnew);
        let act_red = (fs[0] + mu * viol0) - (f + mu * max_violation(&c));
        // Replace the vertex carrying the largest barycentric weight of the
        // step so the simplex volume does not collapse.
        let w = s.clone().lu().solve(&d);
        let drop_j = match w {
            Some(w) => {
                let mut jmax = 1;
                let mut wmax = -1.0;
                for j in 0..n {
                    if w[j].abs() > wmax {
                        wmax = w[j].abs();
                        jmax = j + 1;
                    }
                }
                jmax
            }
            None => 1,
        };
        pts[drop_j] = xu;
        fs[drop_j] = f;
        cs[drop_j] = c;

        // Ratio test: a step that realizes under a tenth of the predicted
        // reduction suggests the resolution is exhausted, but a single miss
        // can be plain model error, so demand a streak before shrinking.
        if act_red < 0.1 * pred_red {
            ratio_fails += 1;
            if ratio_fails >= FAIL_PATIENCE {
                if rho <= settings.rho_end * 1.000001 {
                    converged = true;
                    break;
                }
                rho = (0.5 * rho).max(settings.rho_end);
                ratio_fails = 0;
            }
        } else {
            ratio_fails = 0;
        }
    }

    let (best_point, best_objective, constraint_values, _) =
        ev.best.clone().expect("at least one evaluation");
    Ok(OptimizationResult {
        best_point,
        best_objective,
        constraint_values,
        evaluations_used: ev.used(),
        converged,
        history: ev.history,
    })
}

/// Unit normal to the span of the n x (n-1) face matrix.
fn face_normal(face: &DMatrix<f64>) -> DVector<f64> {
    let n = face.nrows();
    if n == 1 {
        return DVector::from_element(1, 1.0);
    }
    let qr = face.clone().qr();
    let q = qr.q();
    // Complete the orthonormal basis: project out q from a coordinate axis.
    let mut best = DVector::zeros(n);
    let mut best_norm = -1.0;
    for axis in 0..n {
        let mut v = DVector::zeros(n);
        v[axis] = 1.0;
        let proj = &q * (q.transpose() * &v);
        let r = v - proj;
        let rn = r.norm();
        if rn > best_norm {
            best_norm = rn;
            best = r;
        }
    }
    if best_norm > 1e-14 {
        best /= best_norm;
    } else {
        best[0] = 1.0;
    }
    best
}

/// Gradients of the linear interpolants through the simplex: Sᵀ g = delta.
fn linear_models(
    s: &DMatrix<f64>,
    fs: &[f64],
    cs: &[Vec<f64>],
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = s.nrows();
    let m = cs[0].len();
    let st = s.transpose();
    let lu = st.lu();
    let df = DVector::from_fn(n, |j, _| fs[j + 1] - fs[0]);
    let gf = lu.solve(&df)?;
    let mut gcm = DMatrix::zeros(m, n);
    for cix in 0..m {
        let dc = DVector::from_fn(n, |j, _| cs[j + 1][cix] - cs[0][cix]);
        let g = lu.solve(&dc)?;
        for i in 0..n {
            gcm[(cix, i)] = g[i];
        }
    }
    Some((gf, gcm))
}

fn predicted_violation(gc: &DMatrix<f64>, b: &[f64], d: &DVector<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..b.len() {
        let mut v = b[j];
        for i in 0..d.len() {
            v += gc[(j, i)] * d[i];
        }
        worst = worst.max(-v);
    }
    worst
}

fn predicted_merit(
    gf: &DVector<f64>,
    gc: &DMatrix<f64>,
    b: &[f64],
    mu: f64,
    d: &DVector<f64>,
) -> f64 {
    gf.dot(d) + mu * predicted_violation(gc, b, d)
}
