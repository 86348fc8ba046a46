//! Stage-tagged error type: every failure names the pipeline stage and,
//! where it applies, the patient being processed.

/// What went wrong, before stage context is attached.
#[derive(Debug, thiserror::Error)]
pub enum ErrorKind {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (bad magic, truncated data, bad header).
    #[error("format: {0}")]
    Format(String),

    /// Structurally valid but unsupported (e.g. a NIfTI datatype).
    #[error("unsupported format: {0}")]
    Unsupported(String),

    /// Missing or mismatched columns / fields.
    #[error("schema: {0}")]
    Schema(String),

    /// A value failed validation (out of range, wrong label, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// Row-level parse failure with its line number.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Bad configuration.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] survrad_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// An error annotated with the stage that raised it.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub patient: Option<String>,
    pub kind: ErrorKind,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage '{}'", self.stage)?;
        if let Some(p) = &self.patient {
            write!(f, " (patient '{p}')")?;
        }
        write!(f, ": {}", self.kind)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.kind)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
pub type KindResult<T> = std::result::Result<T, ErrorKind>;

/// Attach stage (and optionally patient) context to a bare [`ErrorKind`].
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
    fn stage_patient(self, stage: &'static str, patient: &str) -> Result<T>;
}

impl<T, E: Into<ErrorKind>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| CliError { stage, patient: None, kind: e.into() })
    }

    fn stage_patient(self, stage: &'static str, patient: &str) -> Result<T> {
        self.map_err(|e| CliError {
            stage,
            patient: Some(patient.to_string()),
            kind: e.into(),
        })
    }
}
