use thiserror::Error;

/// Everything that can go wrong between the special functions and the ring simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{function}: argument {value} outside its domain ({expected})")]
    Domain {
        function: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("quartic has a complex root pair (imaginary part {imag:.3e}); kappa1/gamma lies outside the wave domain")]
    NoFourRealRoots { imag: f64 },

    #[error("leading coefficient of the quartic is zero")]
    DegenerateQuartic,

    #[error("wave speed omega = {omega} is not positive")]
    NegativeSpeed { omega: f64 },

    #[error("sensitivity {target} is unreachable on this branch (maximum {max})")]
    TargetUnreachable { target: f64, max: f64 },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("wave does not close on the ring: beta_k*eps*N = {lhs}, 2nK = {rhs}")]
    QuantisationMismatch { lhs: f64, rhs: f64 },

    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("wave amplitude {amplitude:.3e} is below the phase-detection floor")]
    DegenerateWave { amplitude: f64 },

    #[error("trajectory has no snapshot in window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
