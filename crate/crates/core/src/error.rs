use thiserror::Error;

/// Errors raised by pointwise evaluations: invalid parameters and
/// singular configurations of the dynamics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("homotopy parameter alpha = {0} is outside [0, 1]")]
    Alpha(f64),
    #[error("mass ratio {0} is outside (0, 0.5)")]
    MassRatio(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("inconsistent masses: m0 = {m0_kg} kg, dry = {dry_mass_kg} kg")]
    Masses { m0_kg: f64, dry_mass_kg: f64 },
    #[error("position within the collision radius of a primary (rho1 = {rho1:e}, rho2 = {rho2:e})")]
    Singularity { rho1: f64, rho2: f64 },
    #[error("thrust requested with a degenerate primer vector (|lambda_v| = {norm:e})")]
    DegeneratePrimer { norm: f64 },
    #[error("nonpositive mass {0}")]
    Mass(f64),
}

/// Errors raised while propagating the combined state.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error("at t = {t}: {source}")]
    Dynamics { t: f64, source: DomainError },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("singular arc suspected at t = {t}: S = {s:e}, dS/dt = {s_dot:e}")]
    SingularArc { t: f64, s: f64, s_dot: f64 },
    #[error("grazing switch {index} at t = {t}: discontinuity denominator {denominator:e}")]
    GrazingSwitch { index: usize, t: f64, denominator: f64 },
    #[error("time {tau} is not a recorded trajectory node")]
    NotANode { tau: f64 },
    #[error("invalid propagator option: {0}")]
    Options(String),
    #[error("trajectory was propagated without STM checkpoints")]
    NoCheckpoints,
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}
