use std::fmt;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub(crate) fn format(what: &'static str, reason: impl fmt::Display) -> Self {
        Error::Format {
            what,
            reason: reason.to_string(),
        }
    }

    /// Short stable identifier, used by the CLI for machine-readable errors.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidAxis { .. } => "invalid_axis",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "invalid_config",
            Error::LayoutMismatch(_) => "layout_mismatch",
            Error::MissingGradient(_) => "missing_gradient",
            Error::Diverged(_) => "diverged",
            Error::Format { .. } => "malformed_input",
            Error::Layer { source, .. } => source.code(),
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attach a layer path to errors coming out of a block.
pub(crate) trait AtLayer<T> {
    fn at(self, layer: impl Into<String>) -> Result<T>;
}

impl<T> AtLayer<T> for Result<T> {
    fn at(self, layer: impl Into<String>) -> Result<T> {
        self.map_err(|e| Error::Layer {
            layer: layer.into(),
            source: Box::new(e),
        })
    }
}
