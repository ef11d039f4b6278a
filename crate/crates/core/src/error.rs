use std::path::PathBuf;

use thiserror::Error;

/// Attaches the pipeline stage name to an error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ AuditError::Stage { .. } => e,
            e => AuditError::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

/// Everything that can go wrong between reading a CSV and writing a report.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("target column `{0}` not found in header")]
    MissingTarget(String),

    #[error("feature column `{0}` not found in header")]
    MissingFeature(String),

    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),

    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("CSV has no data rows")]
    NoRows,

    #[error("column `{0}` has no observed values, cannot impute")]
    AllMissing(String),

    #[error("column `{0}` still has missing cells")]
    UnimputedMissing(String),

    #[error("target `{column}` must have exactly 2 levels, found {found}")]
    TargetLevels { column: String, found: usize },

    #[error("empty outcome group: {0}")]
    EmptyGroup(&'static str),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("singular normal equations ({distinct} distinct coalitions for {unknowns} unknowns)")]
    Singular { distinct: usize, unknowns: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AuditError>,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AuditError {
    /// Process exit code for the CLI: 2 config, 3 data, 4 training or explanation.
    pub fn exit_code(&self) -> i32 {
        use AuditError::*;
        match self {
            Stage { source, .. } => source.exit_code(),
            Config(_) | Write { .. } => 2,
            Io { .. }
            | Csv(_)
            | MissingTarget(_)
            | MissingFeature(_)
            | DuplicateColumn(_)
            | RaggedRow { .. }
            | NoRows
            | AllMissing(_)
            | UnimputedMissing(_)
            | TargetLevels { .. }
            | EmptyGroup(_) => 3,
            Dimension { .. } | InvalidInput(_) | Diverged { .. } | Singular { .. } => 4,
        }
    }
}
