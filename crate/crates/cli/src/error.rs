use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use gloss::GlossError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Other,
    Arguments,
    UnreadableInput,
    Schema,
    SolverNonFinite,
}

impl Category {
    pub fn exit_code(self) -> u8 {
        match self {
            Category::Other => 1,
            Category::Arguments => 2,
            Category::UnreadableInput => 3,
            Category::Schema => 4,
            Category::SolverNonFinite => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn args(message: impl Into<String>) -> Self {
        Self::new(Category::Arguments, message)
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(Category::Schema, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.category.exit_code())
    }

    /// Error raised while reading `path`.
    pub fn reading(path: &Path, e: GlossError) -> Self {
        let category = match &e {
            GlossError::Io(_) => Category::UnreadableInput,
            _ => classify(&e),
        };
        Self::new(category, format!("{}: {e}", path.display()))
    }
}

fn classify(e: &GlossError) -> Category {
    match e {
        GlossError::SolverNonFinite { .. } => Category::SolverNonFinite,
        GlossError::Trial { source, .. } => classify(source),
        GlossError::ShapeMismatch { .. }
        | GlossError::DimensionMismatch(_)
        | GlossError::InvalidShape(_)
        | GlossError::Format(_)
        | GlossError::Parse { .. }
        | GlossError::Json(_)
        | GlossError::Csv(_) => Category::Schema,
        GlossError::InvalidParameter(_) | GlossError::ModeOutOfRange { .. } => Category::Arguments,
        _ => Category::Other,
    }
}

impl From<GlossError> for CliError {
    fn from(e: GlossError) -> Self {
        Self::new(classify(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Category::Other, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(Category::Other, e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
