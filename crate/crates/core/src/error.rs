use std::fmt;

/// A validation finding anchored to a source position (1-based; 0 when the
/// position is unknown).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            column,
            message: message.into(),
        }
    }

    pub fn unanchored(message: impl Into<String>) -> Self {
        Self::new(0, 0, message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "error: {}", self.message)
        } else {
            write!(f, "{}:{}: error: {}", self.line, self.column, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{}", render(.0))]
    Validation(Vec<Diagnostic>),
    #[error("no device ratio declared for operand `{operand}` in process `{process}`")]
    UndeclaredRatio { operand: String, process: String },
    #[error("{0}")]
    Model(String),
    #[error("negative marking {value:e} at step {step}, index {index}")]
    NegativeMarking { step: usize, index: usize, value: f64 },
    #[error("negative cost coefficient on capability `{0}`")]
    NegativeCost(String),
    #[error("solver: {0}")]
    Solver(String),
}

fn render(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
