use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("coordinate {coord:?} lies outside a box of side {side} in dimension {dim}")]
    OutOfBox {
        coord: Vec<usize>,
        side: usize,
        dim: usize,
    },

    #[error("exact enumeration over {cells} cells exceeds the cap of {cap} cells")]
    EnumerationCap { cells: usize, cap: usize },

    #[error("level {level} needs {cells} cells, over the budget of {budget}")]
    Budget { level: u32, cells: u64, budget: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("bracket [{lo}, {hi}] does not straddle tau = {tau}")]
    Bracket { lo: f64, hi: f64, tau: f64 },

    #[error("usage: {0}")]
    Usage(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::param(name, format!("{p} is not in [0, 1]")))
    }
}
