use thiserror::Error;

/// Failure modes across the co-design pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "mesh resolution {resolution} cannot resolve rib width {rib_width_m} m \
         (element size {element_size_m} m)"
    )]
    MeshResolution {
        resolution: usize,
        rib_width_m: f64,
        element_size_m: f64,
    },

    #[error("degenerate element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("matrix not positive definite in {context}: pivot {pivot:.6e} at index {index}")]
    NotPositiveDefinite {
        context: String,
        pivot: f64,
        index: usize,
    },

    #[error(
        "eigensolver did not converge in {iterations} iterations \
         (worst relative change {worst_change:.3e})"
    )]
    EigenNoConvergence { iterations: usize, worst_change: f64 },

    #[error("point ({x:.6}, {y:.6}) outside the stage envelope")]
    OutsideEnvelope { x: f64, y: f64 },

    #[error("{context} is rank deficient; weakest direction: {direction}")]
    RankDeficient { context: String, direction: String },

    #[error("interpolation simplex degenerate beyond repair after {evaluations} evaluations")]
    SimplexDegenerate { evaluations: usize },

    #[error("design evaluation failed at parameters {params:?}")]
    DesignEvaluation {
        params: Vec<f64>,
        #[source]
        source: Box<CoreError>,
    },

    #[error("no feasible bandwidth target in the search range: {criterion}")]
    InfeasibleBandwidth { criterion: String },

    #[error("loop effectively singular: |1 + L| = {magnitude:.3e} at {omega:.4e} rad/s")]
    SingularLoop { omega: f64, magnitude: f64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;
