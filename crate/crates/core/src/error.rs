use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the signal and metric kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor invariant of [`crate::TimeSeries`] was violated.
    InvalidSeries(&'static str),
    /// A raw sample was NaN or infinite.
    NonFiniteSample {
        index: usize,
    },
    SeriesTooShort {
        duration_s: f64,
        required_s: f64,
    },
    InvalidWindowSpec(&'static str),
    InvalidCutoff {
        cutoff_hz: f64,
        nyquist_hz: f64,
    },
    WrongChannel,
    /// Two HR series do not share a window grid.
    GridMismatch,
    /// MAPE is undefined when a reference value is zero.
    ZeroReference {
        index: usize,
    },
    InsufficientData {
        needed: usize,
        got: usize,
    },
    DegenerateFit,
    EmptyCorpus,
}

impl Error {
    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSeries(_) => "InvalidSeries",
            Error::NonFiniteSample { .. } => "NonFiniteSample",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::InvalidWindowSpec(_) => "InvalidWindowSpec",
            Error::InvalidCutoff { .. } => "InvalidCutoff",
            Error::WrongChannel => "WrongChannel",
            Error::GridMismatch => "GridMismatch",
            Error::ZeroReference { .. } => "ZeroReference",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::DegenerateFit => "DegenerateFit",
            Error::EmptyCorpus => "EmptyCorpus",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSeries(why) => write!(f, "invalid time series: {why}"),
            Error::NonFiniteSample { index } => write!(f, "non-finite sample at index {index}"),
            Error::SeriesTooShort { duration_s, required_s } => write!(
                f,
                "series too short: {duration_s} s available, more than {required_s} s required"
            ),
            Error::InvalidWindowSpec(why) => write!(f, "invalid window spec: {why}"),
            Error::InvalidCutoff { cutoff_hz, nyquist_hz } => write!(
                f,
                "cutoff {cutoff_hz} Hz must lie strictly between 0 and the Nyquist frequency {nyquist_hz} Hz"
            ),
            Error::WrongChannel => write!(f, "operation does not apply to this channel"),
            Error::GridMismatch => write!(f, "HR series do not share a window grid"),
            Error::ZeroReference { index } => {
                write!(f, "reference value at index {index} is zero; MAPE undefined")
            }
            Error::InsufficientData { needed, got } => {
                write!(f, "need at least {needed} pairs, got {got}")
            }
            Error::DegenerateFit => write!(f, "regressor has zero variance"),
            Error::EmptyCorpus => write!(f, "evaluation corpus is empty"),
        }
    }
}

impl core::error::Error for Error {}
