use std::fmt;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("missing weight `{path}`")]
    MissingWeight { path: String },

    #[error("weight `{path}` has shape {actual}, expected {expected}")]
    WeightShape {
        path: String,
        expected: Shape,
        actual: Shape,
    },

    #[error("bad {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("refusing to run: {0}")]
    Guard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl fmt::Display,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.to_string(),
            expected,
            actual,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
