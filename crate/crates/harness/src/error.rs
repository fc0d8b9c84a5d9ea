use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] nfe_core::Error),

    #[error("invalid experiment spec: {0}")]
    Spec(String),

    #[error("dataset not found: {0}")]
    DatasetMissing(String),

    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("malformed dataset archive: {0}")]
    MalformedArchive(String),

    #[error("plot failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl HarnessError {
    /// Stable machine-readable error class.
    pub fn class(&self) -> &'static str {
        use nfe_core::Error as E;
        match self {
            HarnessError::Core(e) => match e {
                E::InvalidPlan(_) | E::InvalidRatios(_) => "invalid_plan",
                E::ShapeMismatch { .. } | E::OutOfRange(_) => "shape_mismatch",
                E::DeadExit { .. } => "dead_exit",
                E::InvalidSparsity(_) | E::BudgetInfeasible(_) => "invalid_sparsity",
                E::InvalidConfig(_) | E::InvalidLabel { .. } | E::Empty(_) => "invalid_config",
                E::Divergence { .. } => "divergence",
                E::Format(_) => "malformed_file",
                E::Io(_) => "io",
                E::Json(_) => "malformed_file",
            },
            HarnessError::Spec(_) | HarnessError::TomlDe(_) | HarnessError::TomlSer(_) => "invalid_spec",
            HarnessError::DatasetMissing(_) => "dataset_missing",
            HarnessError::Checksum { .. } => "checksum_mismatch",
            HarnessError::MalformedArchive(_) => "malformed_archive",
            HarnessError::Plot(_) => "plot",
            HarnessError::Io(_) => "io",
            HarnessError::Json(_) => "malformed_file",
        }
    }

    /// Process exit code; 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "invalid_spec" | "invalid_config" | "invalid_plan" | "invalid_sparsity" => 2,
            "dataset_missing" => 3,
            "checksum_mismatch" | "malformed_archive" | "malformed_file" => 4,
            "divergence" => 5,
            "shape_mismatch" | "dead_exit" => 6,
            "io" => 7,
            _ => 1,
        }
    }
}
