//! Grammian formulas against hand arithmetic and solved models, plus the
//! grid-and-refine placement search against brute-force oracles.

use std::sync::Arc;

use nalgebra::DMatrix;

use codesign_core::fem::{
    build_mesh, modal_model, mode_shape_at, Direction, MaterialSpec, ModalModel, StageParams,
};
use codesign_core::geometry::FrequencySpec;
use codesign_core::placement::{
    controllability_grammian, input_matrix, observability_grammian, optimize_placement,
    output_matrix, placement_objective, DeviceKind, DevicePattern, PatternLayout, PlacementDomain,
};

const EDGE: f64 = 0.3;
const TWO_PI: f64 = std::f64::consts::TAU;

fn aluminum() -> MaterialSpec {
    MaterialSpec {
        young_modulus: 71.7e9,
        poisson_ratio: 0.33,
        density: 2810.0,
    }
}

fn flat_plate() -> StageParams {
    StageParams {
        base_thickness: 0.003,
        rib_height: 0.0,
        rib_width: 2.0e-3,
        rib_pitch: 0.075,
        frame_width: 0.02,
    }
}

/// Model with hand-chosen modal data on a real coarse mesh, so matrix
/// assembly uses genuine interpolation while the grammian inputs stay exact.
fn synthetic_model(omegas: &[f64], zetas: &[f64], fill: impl Fn(usize, &mut [f64])) -> ModalModel {
    let mesh = build_mesh(&flat_plate(), EDGE, 8).unwrap();
    let n = mesh.n_dofs();
    let mut shapes = DMatrix::zeros(n, omegas.len());
    for m in 0..omegas.len() {
        let mut col = vec![0.0; n];
        fill(m, &mut col);
        for (r, v) in col.iter().enumerate() {
            shapes[(r, m)] = *v;
        }
    }
    ModalModel {
        frequencies: omegas.to_vec(),
        mode_shapes: shapes,
        damping: zetas.to_vec(),
        mesh: Arc::new(mesh),
        n_rigid: 0,
        mass_center: [EDGE / 2.0, EDGE / 2.0],
        total_mass: 1.0,
    }
}

fn vertical_actuator_at(theta_offset: [f64; 2]) -> DevicePattern {
    DevicePattern {
        kind: DeviceKind::Actuator,
        layout: PatternLayout::Offsets(vec![theta_offset]),
        directions: vec![vec![Direction::OutOfPlane]],
    }
}

fn vertical_sensor_at(theta_offset: [f64; 2]) -> DevicePattern {
    DevicePattern {
        kind: DeviceKind::Sensor,
        layout: PatternLayout::Offsets(vec![theta_offset]),
        directions: vec![vec![Direction::OutOfPlane]],
    }
}

#[test]
fn controllability_hand_substitution_is_exact() {
    // Unit vertical force at a node, shape value 2 there, zeta 0.01,
    // omega 100: W = 2^2 / (4 * 0.01 * 100) = 1.
    let model = synthetic_model(&[100.0], &[0.01], |_, col| {
        col[5 * 30 + 2] = 2.0;
    });
    let node_pos = model.mesh.node_coords[30];
    let b_a = input_matrix(&model, &vertical_actuator_at([0.0, 0.0]), node_pos).unwrap();

    // Nodal collocation: a single unit entry at the node's vertical dof.
    assert_eq!(b_a.ncols(), 1);
    assert_eq!(b_a[(5 * 30 + 2, 0)], 1.0);
    assert_eq!(b_a.column(0).iter().map(|v| v.abs()).sum::<f64>(), 1.0);

    let w = controllability_grammian(&model, &b_a, 0).unwrap();
    assert!((w - 1.0).abs() <= 1e-12, "{w}");
}

#[test]
fn observability_hand_substitution_matches_rounded_reference() {
    // Reading 3 on one channel, zeta 0.005, omega = 2*pi*46 rad/s:
    // W = 9 / (4 * 0.005 * omega) = 1.557 to four digits.
    let omega = TWO_PI * 46.0;
    let model = synthetic_model(&[omega], &[0.005], |_, col| {
        col[5 * 30 + 2] = 3.0;
    });
    let node_pos = model.mesh.node_coords[30];
    let c_s = output_matrix(&model, &vertical_sensor_at([0.0, 0.0]), node_pos).unwrap();
    let w = observability_grammian(&model, &c_s, 0).unwrap();
    assert!((w - 9.0 / (4.0 * 0.005 * omega)).abs() <= 1e-12);
    assert!((w - 1.557).abs() <= 1e-3, "{w}");
}

#[test]
fn force_at_element_center_spreads_quarter_weights() {
    let model = synthetic_model(&[100.0], &[0.01], |_, _| {});
    let h = model.mesh.spacing();
    let b_a =
        input_matrix(&model, &vertical_actuator_at([0.0, 0.0]), [h / 2.0, h / 2.0]).unwrap();
    let nonzero: Vec<f64> = b_a.column(0).iter().copied().filter(|v| *v != 0.0).collect();
    assert_eq!(nonzero.len(), 4);
    for v in nonzero {
        assert!((v - 0.25).abs() <= 1e-12);
    }
}

#[test]
fn modal_force_gain_equals_interpolated_shape() {
    let model = modal_model(&flat_plate(), EDGE, 12, &aluminum(), &[], 10, 0.005).unwrap();
    let theta = [0.0712, 0.1303];
    let pattern = DevicePattern {
        kind: DeviceKind::Actuator,
        layout: PatternLayout::Offsets(vec![[0.0, 0.0]]),
        directions: vec![vec![Direction::InPlaneX, Direction::OutOfPlane]],
    };
    let b_a = input_matrix(&model, &pattern, theta).unwrap();
    let by_dir = [
        mode_shape_at(&model, theta, Direction::InPlaneX).unwrap(),
        mode_shape_at(&model, theta, Direction::OutOfPlane).unwrap(),
    ];
    for mode in 0..model.n_modes() {
        let phi = model.mode_shapes.column(mode);
        for (c, shape_vals) in by_dir.iter().enumerate() {
            let gain = b_a.column(c).dot(&phi);
            assert!(
                (gain - shape_vals[mode]).abs() <= 1e-12 * shape_vals[mode].abs().max(1.0),
                "mode {mode} channel {c}"
            );
        }
    }
}

#[test]
fn collocated_actuator_and_sensor_have_identical_grammians() {
    let model = modal_model(&flat_plate(), EDGE, 12, &aluminum(), &[], 10, 0.005).unwrap();
    let theta = [0.0834, 0.2117];
    let b_a = input_matrix(&model, &vertical_actuator_at([0.0, 0.0]), theta).unwrap();
    let c_s = output_matrix(&model, &vertical_sensor_at([0.0, 0.0]), theta).unwrap();
    assert_eq!(c_s, b_a.transpose());
    for mode in model.n_rigid..model.n_modes() {
        let wp = controllability_grammian(&model, &b_a, mode).unwrap();
        let wo = observability_grammian(&model, &c_s, mode).unwrap();
        assert_eq!(wp.to_bits(), wo.to_bits(), "mode {mode}");
    }
}

#[test]
fn grammian_scalings_are_exact() {
    let slow = synthetic_model(&[100.0], &[0.005], |_, col| col[5 * 40 + 2] = 1.3);
    let fast = synthetic_model(&[100.0], &[0.010], |_, col| col[5 * 40 + 2] = 1.3);
    let pos = slow.mesh.node_coords[40];
    let b = input_matrix(&slow, &vertical_actuator_at([0.0, 0.0]), pos).unwrap();
    let w_slow = controllability_grammian(&slow, &b, 0).unwrap();
    let w_fast = controllability_grammian(&fast, &b, 0).unwrap();
    assert!((w_fast - 0.5 * w_slow).abs() <= 1e-15 * w_slow);

    let c = output_matrix(&slow, &vertical_sensor_at([0.0, 0.0]), pos).unwrap();
    let scaled = 3.0 * &c;
    let w1 = observability_grammian(&slow, &c, 0).unwrap();
    let w9 = observability_grammian(&slow, &scaled, 0).unwrap();
    assert!((w9 - 9.0 * w1).abs() <= 1e-12 * w9.abs());
}

#[test]
fn rigid_modes_are_rejected() {
    let model = modal_model(&flat_plate(), EDGE, 12, &aluminum(), &[], 10, 0.005).unwrap();
    let b = input_matrix(&model, &vertical_actuator_at([0.0, 0.0]), [0.1, 0.1]).unwrap();
    assert!(controllability_grammian(&model, &b, 0).is_err());
}

#[test]
fn sensor_on_twist_nodal_line_reads_nothing() {
    let model = modal_model(&flat_plate(), EDGE, 16, &aluminum(), &[], 10, 0.005).unwrap();
    let c_s =
        output_matrix(&model, &vertical_sensor_at([0.0, 0.0]), [EDGE / 2.0, EDGE / 2.0]).unwrap();
    let w = observability_grammian(&model, &c_s, model.n_rigid).unwrap();
    assert!(w <= 1e-10, "{w}");
}

#[test]
fn fourfold_pattern_reads_equal_magnitudes_on_the_twist_mode() {
    let model = modal_model(&flat_plate(), EDGE, 16, &aluminum(), &[], 10, 0.005).unwrap();
    let pattern = DevicePattern {
        kind: DeviceKind::Sensor,
        layout: PatternLayout::FourFoldRotation {
            center: [EDGE / 2.0, EDGE / 2.0],
        },
        directions: vec![vec![Direction::OutOfPlane]; 4],
    };
    let c_s = output_matrix(&model, &pattern, [0.09375, 0.05625]).unwrap();
    let phi = model.mode_shapes.column(model.n_rigid);
    let readings: Vec<f64> = (0..4).map(|r| c_s.row(r).transpose().dot(&phi)).collect();
    let mag = readings[0].abs();
    assert!(mag > 0.0);
    for r in &readings {
        assert!((r.abs() - mag).abs() <= 1e-8 * mag, "{readings:?}");
    }
}

#[test]
fn objective_hand_case_and_gamma_zero_limit() {
    // zeta 0.25, omega 1 make each grammian the squared shape value:
    // controlled {1.0, 0.5}, uncontrolled {0.01}, gamma 50 -> 1.5 - 0.5.
    let dof = 5 * 25 + 2;
    let model = synthetic_model(&[1.0, 1.0, 1.0], &[0.25; 3], |m, col| {
        col[dof] = [1.0, 0.5f64.sqrt(), 0.1][m];
    });
    let pos = model.mesh.node_coords[25];
    let pattern = vertical_actuator_at([0.0, 0.0]);
    let spec = FrequencySpec::new(2, 3, 1.0, 2.0).unwrap();
    let j = placement_objective(&model, &pattern, pos, &spec, 50.0).unwrap();
    assert!((j - 1.0).abs() <= 1e-12, "{j}");
    let j0 = placement_objective(&model, &pattern, pos, &spec, 0.0).unwrap();
    assert!((j0 - 1.5).abs() <= 1e-12, "{j0}");
    assert!(placement_objective(&model, &pattern, pos, &spec, -1.0).is_err());
}

#[test]
fn search_matches_brute_force_fine_grid() {
    let model = modal_model(&flat_plate(), EDGE, 12, &aluminum(), &[], 10, 0.005).unwrap();
    let pattern = DevicePattern {
        kind: DeviceKind::Sensor,
        layout: PatternLayout::FourFoldRotation {
            center: [EDGE / 2.0, EDGE / 2.0],
        },
        directions: vec![vec![Direction::OutOfPlane]; 4],
    };
    let spec = FrequencySpec::new(1, 3, TWO_PI * 50.0, TWO_PI * 600.0).unwrap();
    let domain = PlacementDomain {
        region: [[0.03, 0.03], [0.15, 0.15]],
        grid_resolution: 7,
    };
    let (theta, report) = optimize_placement(&model, &pattern, &domain, &spec, 50.0).unwrap();
    assert_eq!(report.per_mode_observability.len(), 3);
    assert!(report.per_mode_observability.iter().all(|w| *w >= 0.0));

    // Brute force at 4x the grid resolution.
    let fine = 25;
    let mut best = f64::NEG_INFINITY;
    let mut best_p = [0.0, 0.0];
    for ix in 0..fine {
        for iy in 0..fine {
            let p = [
                0.03 + 0.12 * ix as f64 / (fine - 1) as f64,
                0.03 + 0.12 * iy as f64 / (fine - 1) as f64,
            ];
            let j = placement_objective(&model, &pattern, p, &spec, 50.0).unwrap();
            if j > best {
                best = j;
                best_p = p;
            }
        }
    }
    let cell = 0.12 / (fine - 1) as f64;
    assert!(report.objective_value >= best - 1e-9 * best.abs());
    assert!(
        (theta[0] - best_p[0]).abs() <= cell && (theta[1] - best_p[1]).abs() <= cell,
        "search {theta:?} vs oracle {best_p:?}"
    );
}

#[test]
fn degenerate_region_returns_its_single_point() {
    let model = modal_model(&flat_plate(), EDGE, 12, &aluminum(), &[], 10, 0.005).unwrap();
    let spec = FrequencySpec::new(1, 3, TWO_PI * 50.0, TWO_PI * 600.0).unwrap();
    let domain = PlacementDomain {
        region: [[0.1, 0.12], [0.1, 0.12]],
        grid_resolution: 5,
    };
    let (theta, _) =
        optimize_placement(&model, &vertical_sensor_at([0.0, 0.0]), &domain, &spec, 50.0).unwrap();
    assert_eq!(theta, [0.1, 0.12]);
}

#[test]
fn flat_objective_ties_break_to_lexicographic_smallest() {
    // All-zero shapes make every grid point an exact tie at J = 0.
    let model = synthetic_model(&[100.0, 200.0], &[0.01; 2], |_, _| {});
    let spec = FrequencySpec::new(1, 2, 1.0, 2.0).unwrap();
    let domain = PlacementDomain {
        region: [[0.05, 0.07], [0.2, 0.22]],
        grid_resolution: 5,
    };
    let (theta, _) =
        optimize_placement(&model, &vertical_sensor_at([0.0, 0.0]), &domain, &spec, 50.0).unwrap();
    assert_eq!(theta, [0.05, 0.07]);
}

#[test]
fn devices_leaving_the_envelope_invalidate_the_point() {
    let model = modal_model(&flat_plate(), EDGE, 12, &aluminum(), &[], 10, 0.005).unwrap();
    let spec = FrequencySpec::new(1, 3, TWO_PI * 50.0, TWO_PI * 600.0).unwrap();
    // Offset pushes the device 50 mm beyond theta; near the right edge the
    // pattern leaves the stage.
    let pattern = DevicePattern {
        kind: DeviceKind::Sensor,
        layout: PatternLayout::Offsets(vec![[0.05, 0.0]]),
        directions: vec![vec![Direction::OutOfPlane]],
    };
    assert!(output_matrix(&model, &pattern, [0.28, 0.15]).is_err());

    // A domain whose every point pushes the device outside errors cleanly.
    let domain = PlacementDomain {
        region: [[0.26, 0.1], [0.29, 0.12]],
        grid_resolution: 5,
    };
    assert!(optimize_placement(&model, &pattern, &domain, &spec, 50.0).is_err());
}
