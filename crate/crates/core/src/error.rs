use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    Domain { what: &'static str, value: f64 },
    /// Mismatched dimensions.
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },
    /// A variable reference that does not resolve against the data schema.
    Schema(String),
    /// Correlation parameters that do not yield a valid Cholesky factor.
    Parameterization(String),
    /// Non-finite intermediate value.
    Numeric { parameter: String, detail: String },
    /// Invalid configuration.
    Config(String),
    /// The loss became NaN; the trace up to the failing epoch is preserved.
    Divergence { epoch: usize, loss_trace: Vec<f64> },
    InsufficientSamples {
        name: String,
        found: usize,
        required: usize,
    },
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            what: what.into(),
            expected,
            found,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain { what, value } => write!(f, "{what}: value {value} outside domain"),
            Error::Shape {
                what,
                expected,
                found,
            } => write!(f, "shape mismatch in {what}: expected {expected}, found {found}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::Parameterization(msg) => write!(f, "parameterization error: {msg}"),
            Error::Numeric { parameter, detail } => {
                write!(f, "non-finite value at parameter `{parameter}`: {detail}")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Divergence { epoch, loss_trace } => write!(
                f,
                "loss diverged at epoch {epoch} ({} finite epochs recorded)",
                loss_trace.len()
            ),
            Error::InsufficientSamples {
                name,
                found,
                required,
            } => write!(f, "`{name}` has {found} samples, need at least {required}"),
        }
    }
}

impl core::error::Error for Error {}
