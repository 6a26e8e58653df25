use thiserror::Error;

/// Errors surfaced by the solver and diagnostics layers.
///
/// Physics aborts (`SingularMap`, `NonPositiveThermo`, `TransversalityLost`)
/// are recoverable in the sense that the caller can report them and stop;
/// configuration errors indicate an unusable setup.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("grid config invalid: {0}")]
    GridConfig(String),

    #[error("flow map singular: min |J| = {min_jac:.3e} fell below floor {floor:.3e}")]
    SingularMap { min_jac: f64, floor: f64 },

    #[error("tangent degenerate at interface frame: |d1 eta| = {norm:.3e}")]
    DegenerateTangent { norm: f64 },

    #[error("thermodynamic state invalid: {quantity} reached {value:.3e} (floor {floor:.3e})")]
    NonPositiveThermo {
        quantity: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("transversality lost: min |b.N| = {min_bn:.3e} on interface/walls (floor {floor:.3e})")]
    TransversalityLost { min_bn: f64, floor: f64 },

    #[error("boundary matrix singular: |det E| = {det:.3e} below {floor:.3e}")]
    SingularBoundaryMatrix { det: f64, floor: f64 },

    #[error("time step {dt:.3e} violates stability bound {bound:.3e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("history ring holds {have} states, need {need} for requested time derivative")]
    InsufficientHistory { have: usize, need: usize },

    #[error("derivative budget exceeded: requested total order {requested}, grid supports {budget}")]
    DerivativeBudgetExceeded { requested: usize, budget: usize },

    #[error("mollifier radius {radius:.3e} invalid: {reason}")]
    InvalidMollifierRadius { radius: f64, reason: String },

    #[error("elliptic solve failed: {0}")]
    EllipticSolveFailure(String),

    #[error("corrector failed to converge at order {order}: residual {residual:.3e} after {iters} iterations")]
    CorrectorStalled {
        order: usize,
        residual: f64,
        iters: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl SimError {
    /// Process exit code class: 1 for physics aborts, 2 for config/setup errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::SingularMap { .. }
            | SimError::NonPositiveThermo { .. }
            | SimError::TransversalityLost { .. }
            | SimError::SingularBoundaryMatrix { .. }
            | SimError::CorrectorStalled { .. }
            | SimError::CflViolation { .. } => 1,
            _ => 2,
        }
    }

    /// True for runtime physics aborts (as opposed to setup problems).
    pub fn is_physics_abort(&self) -> bool {
        self.exit_code() == 1
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
