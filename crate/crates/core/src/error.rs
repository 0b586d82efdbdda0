use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward root must be a single element, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("variable does not belong to this tape")]
    ForeignVariable,

    #[error("oracle failure: forward closure is not deterministic ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("missing gradient for parameter `{name}`")]
    MissingGradient { name: String },

    #[error("unknown parameter `{name}`")]
    UnknownParameter { name: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
