//! Stage geometry optimization: minimize structural mass over the five
//! plate parameters subject to a modal frequency window.
//!
//! The window splits the constrained flexible modes in two: the first
//! `n_controlled` modes must sit at or below `omega_low`, where the motion
//! controller can actively damp them, and the remaining constrained modes
//! must sit at or above `omega_high`, safely past the control bandwidth.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::cobyla::{cobyla_minimize, BoxBounds, CobylaSettings, OptimizationResult};
use crate::error::{CoreError, Result};
use crate::fem::{
    assemble, build_mesh, solve_modes, stage_mass, LumpedAttachment, MaterialSpec, StageParams,
};

/// Modal frequency window for the constrained flexible modes, rad/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencySpec {
    pub n_controlled: usize,
    pub m_total: usize,
    pub omega_low: f64,
    pub omega_high: f64,
}

impl FrequencySpec {
    pub fn new(n_controlled: usize, m_total: usize, omega_low: f64, omega_high: f64) -> Result<Self> {
        if n_controlled >= m_total {
            return Err(CoreError::InvalidParameter(format!(
                "n_controlled {n_controlled} must stay below m_total {m_total}"
            )));
        }
        if !(omega_low > 0.0 && omega_high > omega_low) {
            return Err(CoreError::InvalidParameter(format!(
                "need 0 < omega_low < omega_high, got [{omega_low}, {omega_high}] rad/s"
            )));
        }
        Ok(FrequencySpec {
            n_controlled,
            m_total,
            omega_low,
            omega_high,
        })
    }
}

/// Fixed surroundings of a design evaluation: everything the finite-element
/// model needs besides the five design variables.
#[derive(Clone, Debug)]
pub struct DesignContext {
    pub stage_edge: f64,
    pub resolution: usize,
    pub material: MaterialSpec,
    pub attachments: Vec<LumpedAttachment>,
    /// Modes to solve per evaluation; must cover 6 rigid + m_total flexible.
    pub n_modes: usize,
    pub damping_ratio: f64,
}

impl DesignContext {
    pub fn validate(&self, m_total: usize) -> Result<()> {
        self.material.validate()?;
        for att in &self.attachments {
            att.validate(self.stage_edge)?;
        }
        if self.n_modes < 6 + m_total {
            return Err(CoreError::InvalidParameter(format!(
                "n_modes {} cannot cover 6 rigid plus {m_total} constrained flexible modes",
                self.n_modes
            )));
        }
        Ok(())
    }
}

/// Memoized design evaluation: builds the mesh, assembles, and solves modes
/// once per distinct parameter vector, keyed by exact bit patterns.
pub struct DesignEvaluator<'a> {
    context: &'a DesignContext,
    cache: HashMap<[u64; 5], (f64, Vec<f64>)>,
    solves: usize,
}

impl<'a> DesignEvaluator<'a> {
    pub fn new(context: &'a DesignContext) -> Self {
        DesignEvaluator {
            context,
            cache: HashMap::new(),
            solves: 0,
        }
    }

    /// Mass (kg) and the first m_total flexible frequencies (rad/s).
    pub fn evaluate_design(
        &mut self,
        params: &StageParams,
        spec: &FrequencySpec,
    ) -> Result<(f64, Vec<f64>)> {
        let theta = params.to_vec();
        let key = [
            theta[0].to_bits(),
            theta[1].to_bits(),
            theta[2].to_bits(),
            theta[3].to_bits(),
            theta[4].to_bits(),
        ];
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }

        let annotate = |source: CoreError| CoreError::DesignEvaluation {
            params: theta.clone(),
            source: Box::new(source),
        };

        let ctx = self.context;
        let mesh = build_mesh(params, ctx.stage_edge, ctx.resolution).map_err(annotate)?;
        let (mass, stiffness) = assemble(&mesh, &ctx.material, &ctx.attachments).map_err(annotate)?;
        let model =
            solve_modes(&mesh, &mass, &stiffness, ctx.n_modes, ctx.damping_ratio).map_err(annotate)?;
        self.solves += 1;

        if model.n_rigid != 6 {
            return Err(annotate(CoreError::InvalidParameter(format!(
                "free stage must show 6 rigid modes, found {}",
                model.n_rigid
            ))));
        }

        let weight = stage_mass(&mesh, &ctx.material, &ctx.attachments);
        let freqs: Vec<f64> = model.flexible_frequencies()[..spec.m_total].to_vec();
        self.cache.insert(key, (weight, freqs.clone()));
        Ok((weight, freqs))
    }

    /// Finite-element solves performed so far (cache misses).
    pub fn fe_solve_count(&self) -> usize {
        self.solves
    }
}

/// One-shot evaluation without persistent caching.
pub fn evaluate_design(
    params: &StageParams,
    context: &DesignContext,
    spec: &FrequencySpec,
) -> Result<(f64, Vec<f64>)> {
    context.validate(spec.m_total)?;
    DesignEvaluator::new(context).evaluate_design(params, spec)
}

fn check_bounds(bounds: &BoxBounds, context: &DesignContext) -> Result<()> {
    if bounds.dim() != 5 {
        return Err(CoreError::InvalidParameter(format!(
            "geometry bounds must cover 5 parameters, got {}",
            bounds.dim()
        )));
    }
    // Equal bounds pin a coordinate; only inverted or non-finite pairs are
    // rejected, and at least one coordinate must stay free.
    for (l, u) in bounds.lower.iter().zip(bounds.upper.iter()) {
        if !(u >= l) {
            return Err(CoreError::InvalidParameter(format!(
                "bound pair [{l}, {u}] is inverted or not finite"
            )));
        }
    }
    if bounds
        .lower
        .iter()
        .zip(bounds.upper.iter())
        .all(|(l, u)| u == l)
    {
        return Err(CoreError::InvalidParameter(
            "all five geometry coordinates are pinned; nothing to optimize".into(),
        ));
    }
    // Every box corner must be a valid design, so the cross couplings are
    // checked against the worst combination.
    StageParams::from_slice(&bounds.lower)?.validate()?;
    if bounds.upper[2] >= bounds.lower[3] {
        return Err(CoreError::InvalidParameter(format!(
            "rib_width can reach {} m while rib_pitch can drop to {} m; ribs would overlap",
            bounds.upper[2], bounds.lower[3]
        )));
    }
    let element = context.stage_edge / context.resolution as f64;
    if bounds.upper[1] > 0.0 && bounds.lower[2] < element {
        return Err(CoreError::MeshResolution {
            resolution: context.resolution,
            rib_width_m: bounds.lower[2],
            element_size_m: element,
        });
    }
    if bounds.upper[4] >= 0.5 * context.stage_edge {
        return Err(CoreError::InvalidParameter(format!(
            "frame_width can reach {} m, at least half the stage edge",
            bounds.upper[4]
        )));
    }
    Ok(())
}

/// Minimizes stage mass over the box subject to the frequency window. The
/// optimizer works on variables affinely normalized to [0, 1]; results and
/// history are reported in physical units.
pub fn optimize_geometry(
    initial: &StageParams,
    bounds: &BoxBounds,
    spec: &FrequencySpec,
    context: &DesignContext,
    settings: &CobylaSettings,
) -> Result<OptimizationResult> {
    context.validate(spec.m_total)?;
    check_bounds(bounds, context)?;
    let theta0 = initial.to_vec();
    if !bounds.contains(&theta0) {
        return Err(CoreError::InvalidParameter(
            "initial design outside the bound box".into(),
        ));
    }

    // Pinned coordinates (zero span) are held at their bound value and
    // excluded from the optimization vector.
    let span: Vec<f64> = bounds
        .lower
        .iter()
        .zip(bounds.upper.iter())
        .map(|(l, u)| u - l)
        .collect();
    let free: Vec<usize> = (0..span.len()).filter(|&i| span[i] > 0.0).collect();
    let to_physical = |x: &[f64]| -> Vec<f64> {
        let mut theta = bounds.lower.clone();
        for (v, &i) in x.iter().zip(free.iter()) {
            theta[i] += v * span[i];
        }
        theta
    };
    let x0: Vec<f64> = free
        .iter()
        .map(|&i| (theta0[i] - bounds.lower[i]) / span[i])
        .collect();

    // The objective and every constraint share one cached evaluator; a
    // structural failure poisons the run and is reported afterwards, since
    // the optimizer itself only sees finite numbers.
    let shared = RefCell::new((DesignEvaluator::new(context), None::<CoreError>));
    let eval_at = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut guard = shared.borrow_mut();
        let (evaluator, poison) = &mut *guard;
        if poison.is_some() {
            return (f64::MAX, vec![-1.0; spec.m_total]);
        }
        let theta = to_physical(x);
        let params = match StageParams::from_slice(&theta) {
            Ok(p) => p,
            Err(e) => {
                *poison = Some(e);
                return (f64::MAX, vec![-1.0; spec.m_total]);
            }
        };
        match evaluator.evaluate_design(&params, spec) {
            Ok((mass, freqs)) => {
                let c: Vec<f64> = freqs
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        if i < spec.n_controlled {
                            1.0 - w / spec.omega_low
                        } else {
                            w / spec.omega_high - 1.0
                        }
                    })
                    .collect();
                (mass, c)
            }
            Err(e) => {
                *poison = Some(e);
                (f64::MAX, vec![-1.0; spec.m_total])
            }
        }
    };

    let eval_ref = &eval_at;
    let mut objective = |x: &[f64]| eval_ref(x).0;
    let mut constraints: Vec<Box<dyn FnMut(&[f64]) -> f64 + '_>> = (0..spec.m_total)
        .map(|i| -> Box<dyn FnMut(&[f64]) -> f64 + '_> {
            Box::new(move |x: &[f64]| eval_ref(x).1[i])
        })
        .collect();

    let unit_box = BoxBounds::new(vec![0.0; free.len()], vec![1.0; free.len()])?;
    let run = cobyla_minimize(&mut objective, &mut constraints, &x0, &unit_box, settings);
    drop(constraints);

    if let Some(err) = shared.borrow_mut().1.take() {
        return Err(err);
    }
    let mut result = run?;

    result.best_point = to_physical(&result.best_point);
    for entry in &mut result.history {
        entry.point = to_physical(&entry.point);
    }
    Ok(result)
}
