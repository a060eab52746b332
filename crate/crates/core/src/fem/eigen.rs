//! Generalized symmetric eigensolvers for K phi = lambda M phi.
//!
//! The production path factors K + sigma*M once (banded Cholesky) and runs
//! subspace iteration with Rayleigh-Ritz projection, seeded with the exact
//! rigid-body fields so the six zero modes are resolved immediately. A dense
//! reduction through the mass Cholesky backs small models and serves as an
//! independent reference in tests.

use super::banded::SymmetricBanded;
use super::{rigid_body_fields, FEMesh};
use crate::error::{CoreError, Result};
use nalgebra::DMatrix;

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    /// Spectral shift (rad/s)^2 making K + sigma*M positive definite; must
    /// stay well below the first flexible eigenvalue.
    pub shift: f64,
    /// Extra subspace columns beyond the requested mode count.
    pub extra_vectors: usize,
    /// Relative eigenvalue change tolerance between iterations. Degenerate
    /// pairs of a symmetric stage dither near 1e-10; anything at or below
    /// 1e-9 is far tighter than the discretization error downstream.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Models at or below this dof count use the dense path outright.
    pub dense_cutoff: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            // (2*pi*5)^2: desk-scale stages resonate far above 5 Hz.
            shift: 986.96,
            extra_vectors: 8,
            tolerance: 1e-9,
            max_iterations: 200,
            dense_cutoff: 600,
        }
    }
}

/// Dense generalized symmetric solve via M = L Lᵀ reduction: eigenpairs of
/// L⁻¹ K L⁻ᵀ, back-transformed and M-orthonormal. Ascending order.
pub fn dense_generalized_eigen(
    mass: &DMatrix<f64>,
    stiffness: &DMatrix<f64>,
    n_modes: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = mass.nrows();
    if n_modes > n {
        return Err(CoreError::InvalidParameter(format!(
            "requested {n_modes} modes from an order-{n} system"
        )));
    }
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| CoreError::NotPositiveDefinite {
            context: "mass matrix in dense eigensolver".into(),
            pivot: f64::NAN,
            index: 0,
        })?;
    let l = chol.l();
    // A = L⁻¹ K L⁻ᵀ, built by two triangular solves.
    let mut a = stiffness.clone();
    let ok1 = l.solve_lower_triangular_mut(&mut a);
    a.transpose_mut();
    let ok2 = l.solve_lower_triangular_mut(&mut a);
    if !(ok1 && ok2) {
        return Err(CoreError::NotPositiveDefinite {
            context: "singular mass Cholesky factor".into(),
            pivot: 0.0,
            index: 0,
        });
    }
    // Symmetrize away the roundoff skew before the symmetric solver.
    let a = 0.5 * (&a + a.transpose());
    let eig = nalgebra::SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = Vec::with_capacity(n_modes);
    let mut vectors = DMatrix::zeros(n, n_modes);
    for (col, &idx) in order.iter().take(n_modes).enumerate() {
        values.push(eig.eigenvalues[idx]);
        let q = eig.eigenvectors.column(idx).clone_owned();
        let phi = l.transpose().solve_upper_triangular(&q).ok_or_else(|| {
            CoreError::NotPositiveDefinite {
                context: "mass Cholesky back-substitution".into(),
                pivot: f64::NAN,
                index: idx,
            }
        })?;
        vectors.set_column(col, &phi);
    }
    Ok((values, vectors))
}

/// Row-major n x p block helpers for the iteration workspace.
struct Block {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Block {
    fn zeros(n: usize, p: usize) -> Self {
        Block {
            n,
            p,
            data: vec![0.0; n * p],
        }
    }

    fn set_column(&mut self, c: usize, v: &[f64]) {
        for i in 0..self.n {
            self.data[i * self.p + c] = v[i];
        }
    }

    /// Sᵀ T over columns: out[a][b] = sum_i S[i,a] T[i,b].
    fn gram(&self, other: &Block) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p, other.p);
        for i in 0..self.n {
            let rs = &self.data[i * self.p..(i + 1) * self.p];
            let rt = &other.data[i * other.p..(i + 1) * other.p];
            for (a, &sa) in rs.iter().enumerate() {
                if sa != 0.0 {
                    for (b, &tb) in rt.iter().enumerate() {
                        out[(a, b)] += sa * tb;
                    }
                }
            }
        }
        out
    }

    /// self = source * z, applied row by row.
    fn assign_product(&mut self, source: &Block, z: &DMatrix<f64>) {
        let p = self.p;
        for i in 0..self.n {
            let rs = &source.data[i * p..(i + 1) * p];
            let rd = &mut self.data[i * p..(i + 1) * p];
            for b in 0..p {
                let mut acc = 0.0;
                for a in 0..p {
                    acc += rs[a] * z[(a, b)];
                }
                rd[b] = acc;
            }
        }
    }
}

/// Lowest n_modes eigenpairs of the banded pencil, mass-normalized.
pub fn lowest_eigenpairs(
    mass: &SymmetricBanded,
    stiffness: &SymmetricBanded,
    mesh: &FEMesh,
    n_modes: usize,
    opts: &EigenOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = mass.n();
    if n <= opts.dense_cutoff {
        return dense_generalized_eigen(&mass.to_dense(), &stiffness.to_dense(), n_modes);
    }

    let p = (n_modes + opts.extra_vectors).min(n);
    let sigma = opts.shift;
    let mut shifted = stiffness.clone();
    shifted.add_scaled(mass, sigma);
    let factor = shifted.cholesky("shifted stiffness K + sigma*M")?;

    // Start block: exact rigid fields, then unit loads spread over the mesh
    // cycling through w/u/v components. Deterministic by construction.
    let mut x = Block::zeros(n, p);
    let center = [0.5 * mesh.stage_edge, 0.5 * mesh.stage_edge];
    let rigid = rigid_body_fields(mesh, center);
    for c in 0..6.min(p) {
        let col: Vec<f64> = rigid.column(c).iter().copied().collect();
        x.set_column(c, &col);
    }
    let n_nodes = mesh.n_nodes();
    let comps = [2usize, 0, 1];
    for c in 6..p {
        let k = c - 6;
        let node = ((k + 1) * n_nodes) / (p - 5);
        let comp = comps[k % comps.len()];
        let dof = mesh.dof_index(node.min(n_nodes - 1), comp);
        let mut col = vec![0.0; n];
        col[dof] = 1.0;
        x.set_column(c, &col);
    }

    let mut y = Block::zeros(n, p);
    let mut xbar = Block::zeros(n, p);
    let mut ybar = Block::zeros(n, p);
    let mut prev = vec![f64::INFINITY; n_modes];
    let mut worst = f64::INFINITY;

    for _iter in 0..opts.max_iterations {
        // Inverse step: Xbar = (K + sigma*M)^-1 M X.
        mass.mul_multi(&x.data, p, &mut y.data);
        xbar.data.copy_from_slice(&y.data);
        factor.solve_multi_in_place(&mut xbar.data, p);

        // Rayleigh-Ritz on the projected pencil (Kp, Mp). The inverse step
        // scales column c by ~1/(lambda_c + sigma), so the projection is
        // rescaled to unit M-norm columns to keep Mp well conditioned; the
        // pencil eigenvalues are invariant under this congruence.
        mass.mul_multi(&xbar.data, p, &mut ybar.data);
        let mut kp = xbar.gram(&y); // Xbarᵀ (K + sigma*M) Xbar = Xbarᵀ Y
        let mut mp = xbar.gram(&ybar);
        let mut scale = vec![0.0; p];
        for (c, s) in scale.iter_mut().enumerate() {
            *s = 1.0 / mp[(c, c)].max(f64::MIN_POSITIVE).sqrt();
        }
        for a in 0..p {
            for b in 0..p {
                kp[(a, b)] *= scale[a] * scale[b];
                mp[(a, b)] *= scale[a] * scale[b];
            }
        }
        let kp = 0.5 * (&kp + kp.transpose());
        let mp = 0.5 * (&mp + mp.transpose());
        let (mu, z) = dense_generalized_eigen(&mp, &kp, p)?;
        let mut zs = z;
        for a in 0..p {
            for b in 0..p {
                zs[(a, b)] *= scale[a];
            }
        }

        x.assign_product(&xbar, &zs);

        worst = 0.0;
        for i in 0..n_modes {
            let rel = (mu[i] - prev[i]).abs() / mu[i].max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
        prev[..n_modes].copy_from_slice(&mu[..n_modes]);
        if worst < opts.tolerance {
            let lambdas: Vec<f64> = mu[..n_modes].iter().map(|m| m - sigma).collect();
            let mut shapes = DMatrix::zeros(n, n_modes);
            for c in 0..n_modes {
                for i in 0..n {
                    shapes[(i, c)] = x.data[i * p + c];
                }
            }
            return Ok((lambdas, shapes));
        }
    }

    Err(CoreError::EigenNoConvergence {
        iterations: opts.max_iterations,
        worst_change: worst,
    })
}
