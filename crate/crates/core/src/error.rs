use thiserror::Error;

/// Errors raised by the numerical toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degree overflow: {left} + {right} exceeds dimension {dim}")]
    DegreeOverflow { left: usize, right: usize, dim: usize },

    #[error("unsupported dimension {0} (forms are limited to 1..=8)")]
    UnsupportedDimension(usize),

    #[error("interior product of a 0-form")]
    DegreeZero,

    #[error("metric tensor is not symmetric positive definite: {0}")]
    InvalidMetric(String),

    #[error("complex structure is not compatible with the metric: {0}")]
    IncompatibleComplexStructure(String),

    #[error("potential is singular at q = 0")]
    Singular,

    #[error("rest point: the Hamiltonian gradient vanishes")]
    RestPoint,

    #[error("degenerate denominator {0:e}: gradients are parallel")]
    DegenerateDenominator(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("start point lies inside the collision radius (|q| = {radius:e})")]
    SingularStart { radius: f64 },

    #[error("start point is already inside the target sphere (|q| = {radius}, target {target})")]
    StartInsideSurface { radius: f64, target: f64 },

    #[error("start energy {actual} differs from the surface energy {expected}")]
    EnergyMismatch { expected: f64, actual: f64 },

    #[error("no hit before the trajectory ended ({0})")]
    NoHit(String),

    #[error("tangential hit (margin {margin:e} below threshold)")]
    TangentialHit { margin: f64 },

    #[error("collision at t = {time} before reaching the target surface")]
    CollisionBeforeHit { time: f64 },

    #[error("point is off the surface by {deviation:e}")]
    OffSurface { deviation: f64 },

    #[error("surface m = {m} is empty at this energy")]
    EmptySurface { m: u32 },

    #[error("degenerate dimension n = 1: surfaces consist of two points")]
    DegenerateDimension,

    #[error("flow tube leaves the chart: {0}")]
    TubeEscapesChart(String),

    #[error("flow ends before the tube half-width (escape time {0})")]
    EscapeTimeExceeded(f64),

    #[error("need at least {needed} distinct points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("non-positive area {value} at m = {m}")]
    NonPositiveArea { m: f64, value: f64 },

    #[error("sampling region has no admissible points (E - V < 0 everywhere)")]
    EmptyRegion,

    #[error("energy shell half-width {delta:e} too large for the region")]
    ShellTooThick { delta: f64 },

    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
