use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("attack power {power} does not exceed the solo drag coefficient {min}; the rider cannot outrun the peloton")]
    InfeasibleAttack { power: f64, min: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("root is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("requested tolerance not reached: {0}")]
    Tolerance(String),
    #[error("step size underflow at t = {t} (h = {h}); the problem may be stiff, try the implicit method")]
    StepUnderflow { t: f64, h: f64 },
    #[error("rider stalled at t = {t}, x = {x}")]
    Stall { t: f64, x: f64 },
    #[error("rider never reaches the finish line: {0}")]
    NeverFinishes(String),
    #[error("rider never reaches the front of the peloton: {0}")]
    NeverReachesFront(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
