use tamd_core::TamdError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("spec line {line}: {message}")]
    SpecSyntax { line: usize, message: String },
    #[error(transparent)]
    Core(#[from] TamdError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    /// 1 for bad input or environment, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) => match e {
                TamdError::DegenerateCovariance { .. }
                | TamdError::BarrierDomain(_)
                | TamdError::InvalidInit(_)
                | TamdError::Init(_) => 2,
                _ => 1,
            },
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
