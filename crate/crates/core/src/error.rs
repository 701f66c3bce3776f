use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite velocity at ({}, {}, {}), t = {time}", point[0], point[1], point[2])]
    Evaluation { point: [f64; 3], time: f64 },

    #[error("singular surface point at (u, v) = ({u}, {v}), t = {t}: tangent plane is rank deficient")]
    SingularPoint { u: f64, v: f64, t: f64 },

    #[error("order {order} spline needs at least {needed} intervals per direction, got {got}")]
    InsufficientData { order: usize, needed: usize, got: usize },

    #[error("parameter ({u}, {v}) is outside the spline domain [0,1]^2")]
    Domain { u: f64, v: f64 },

    #[error("quadrature configuration: {0}")]
    Configuration(String),

    #[error("improper intersection (tangency) at tau = {tau}")]
    Tangency { tau: f64 },

    #[error("unresolved crossing near tau = {tau}; increase the pathline sampling")]
    UnresolvedCrossing { tau: f64 },

    #[error("degree at ({}, {}, {}) is degenerate: no consistent majority over {rays} rays; retessellate or perturb the point", point[0], point[1], point[2])]
    Degenerate { point: [f64; 3], rays: usize },

    #[error("reference flux failed its self-convergence gate: {coarse} vs {fine} (relative gap {gap:e} > {tolerance:e})")]
    ReferenceQuality {
        coarse: f64,
        fine: f64,
        gap: f64,
        tolerance: f64,
    },

    #[error("identity violation: {0}")]
    IdentityViolation(String),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for failures of a numerical quality gate, as opposed to bad input.
    pub fn is_numerical_gate(&self) -> bool {
        matches!(
            self,
            Error::ReferenceQuality { .. } | Error::IdentityViolation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
