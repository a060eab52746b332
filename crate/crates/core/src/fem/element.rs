//! Flat rectangular shell element: bilinear membrane (u, v) plus Mindlin
//! bending (w, s_x, s_y) with edge-midpoint assumed transverse shear.
//!
//! The slope dofs s_x, s_y equal ∂w/∂x, ∂w/∂y for shear-free deformation, so
//! unit rigid rotations are (w = -(x-x0), s_x = -1) about y and
//! (w = (y-y0), s_y = 1) about x. The assumed-shear tying removes locking
//! without introducing spurious zero-energy modes: a free element pair (K, M)
//! carries exactly the six rigid motions in its stiffness null space.

use super::MaterialSpec;

pub const NODE_DOF: usize = 5;
pub const ELEM_DOF: usize = 4 * NODE_DOF;

/// First-order shear correction for a homogeneous section.
const SHEAR_CORRECTION: f64 = 5.0 / 6.0;

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

#[inline]
fn shape(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let mut n = [0.0; 4];
    let mut dxi = [0.0; 4];
    let mut deta = [0.0; 4];
    for i in 0..4 {
        n[i] = 0.25 * (1.0 + XI[i] * xi) * (1.0 + ETA[i] * eta);
        dxi[i] = 0.25 * XI[i] * (1.0 + ETA[i] * eta);
        deta[i] = 0.25 * ETA[i] * (1.0 + XI[i] * xi);
    }
    (n, dxi, deta)
}

/// k += w * bᵀ d b for a small constitutive block d (rows x rows).
fn add_quadratic_form<const R: usize>(
    k: &mut [[f64; ELEM_DOF]; ELEM_DOF],
    b: &[[f64; ELEM_DOF]; R],
    d: &[[f64; R]; R],
    w: f64,
) {
    for r in 0..R {
        for c in 0..R {
            let drc = d[r][c] * w;
            if drc == 0.0 {
                continue;
            }
            for a in 0..ELEM_DOF {
                let ba = b[r][a];
                if ba == 0.0 {
                    continue;
                }
                let s = drc * ba;
                for q in 0..ELEM_DOF {
                    k[a][q] += s * b[c][q];
                }
            }
        }
    }
}

/// Transverse shear rows gamma_xz, gamma_yz at a parent point, from the
/// unreduced kinematics gamma = grad(w) - s.
fn shear_rows(xi: f64, eta: f64, inv_a: f64, inv_b: f64) -> [[f64; ELEM_DOF]; 2] {
    let (n, dxi, deta) = shape(xi, eta);
    let mut rows = [[0.0; ELEM_DOF]; 2];
    for i in 0..4 {
        rows[0][NODE_DOF * i + 2] = dxi[i] * inv_a;
        rows[0][NODE_DOF * i + 3] = -n[i];
        rows[1][NODE_DOF * i + 2] = deta[i] * inv_b;
        rows[1][NODE_DOF * i + 4] = -n[i];
    }
    rows
}

/// Stiffness and consistent mass of one rectangular element of in-plane size
/// dx x dy and total thickness t. Dof order per node: [u, v, w, s_x, s_y].
pub fn element_matrices(
    dx: f64,
    dy: f64,
    material: &MaterialSpec,
    t: f64,
) -> ([[f64; ELEM_DOF]; ELEM_DOF], [[f64; ELEM_DOF]; ELEM_DOF]) {
    let (a, b) = (0.5 * dx, 0.5 * dy);
    let (inv_a, inv_b) = (1.0 / a, 1.0 / b);
    let e = material.young_modulus;
    let nu = material.poisson_ratio;
    let rho = material.density;
    let g = 0.5 * e / (1.0 + nu);

    let cm = e * t / (1.0 - nu * nu);
    let d_m = [
        [cm, cm * nu, 0.0],
        [cm * nu, cm, 0.0],
        [0.0, 0.0, 0.5 * cm * (1.0 - nu)],
    ];
    let cb = e * t * t * t / (12.0 * (1.0 - nu * nu));
    let d_b = [
        [cb, cb * nu, 0.0],
        [cb * nu, cb, 0.0],
        [0.0, 0.0, 0.5 * cb * (1.0 - nu)],
    ];
    let cs = SHEAR_CORRECTION * g * t;
    let d_s = [[cs, 0.0], [0.0, cs]];

    // Assumed shear is sampled at edge midpoints and interpolated linearly
    // across the element (Bathe-Dvorkin tying, specialized to rectangles).
    let tie_xz = [shear_rows(0.0, -1.0, inv_a, inv_b), shear_rows(0.0, 1.0, inv_a, inv_b)];
    let tie_yz = [shear_rows(-1.0, 0.0, inv_a, inv_b), shear_rows(1.0, 0.0, inv_a, inv_b)];

    let mut k = [[0.0; ELEM_DOF]; ELEM_DOF];
    let mut m = [[0.0; ELEM_DOF]; ELEM_DOF];
    let w_gp = a * b;
    let rot_inertia = rho * t * t * t / 12.0;

    for &xi in GAUSS.iter() {
        for &eta in GAUSS.iter() {
            let (n, dxi, deta) = shape(xi, eta);
            let mut dndx = [0.0; 4];
            let mut dndy = [0.0; 4];
            for i in 0..4 {
                dndx[i] = dxi[i] * inv_a;
                dndy[i] = deta[i] * inv_b;
            }

            let mut b_m = [[0.0; ELEM_DOF]; 3];
            let mut b_b = [[0.0; ELEM_DOF]; 3];
            for i in 0..4 {
                b_m[0][NODE_DOF * i] = dndx[i];
                b_m[1][NODE_DOF * i + 1] = dndy[i];
                b_m[2][NODE_DOF * i] = dndy[i];
                b_m[2][NODE_DOF * i + 1] = dndx[i];

                b_b[0][NODE_DOF * i + 3] = dndx[i];
                b_b[1][NODE_DOF * i + 4] = dndy[i];
                b_b[2][NODE_DOF * i + 3] = dndy[i];
                b_b[2][NODE_DOF * i + 4] = dndx[i];
            }

            let mut b_s = [[0.0; ELEM_DOF]; 2];
            let (wa, wc) = (0.5 * (1.0 - eta), 0.5 * (1.0 + eta));
            let (wd, wb) = (0.5 * (1.0 - xi), 0.5 * (1.0 + xi));
            for q in 0..ELEM_DOF {
                b_s[0][q] = wa * tie_xz[0][0][q] + wc * tie_xz[1][0][q];
                b_s[1][q] = wd * tie_yz[0][1][q] + wb * tie_yz[1][1][q];
            }

            add_quadratic_form(&mut k, &b_m, &d_m, w_gp);
            add_quadratic_form(&mut k, &b_b, &d_b, w_gp);
            add_quadratic_form(&mut k, &b_s, &d_s, w_gp);

            let m_tr = rho * t * w_gp;
            let m_rot = rot_inertia * w_gp;
            for i in 0..4 {
                for j in 0..4 {
                    let nn = n[i] * n[j];
                    for c in 0..3 {
                        m[NODE_DOF * i + c][NODE_DOF * j + c] += m_tr * nn;
                    }
                    for c in 3..5 {
                        m[NODE_DOF * i + c][NODE_DOF * j + c] += m_rot * nn;
                    }
                }
            }
        }
    }
    (k, m)
}
