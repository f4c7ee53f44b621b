use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The effective arrival rate does not stay below the service rate.
    #[error("unstable system: effective arrival rate {effective_rate} is not below service rate {mu}")]
    Unstable { effective_rate: f64, mu: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    /// The smooth mean-field field only applies while some queues are empty.
    #[error("boundary regime: u_0 = {u0} is not positive")]
    BoundaryRegime { u0: f64 },

    #[error("integration step underflow at t = {t} (step {step})")]
    Stiffness { t: f64, step: f64 },

    #[error("Lyapunov weights over {levels} levels are not representable for mu/(lambda q) = {ratio}")]
    WeightsUnrepresentable { levels: usize, ratio: f64 },

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
