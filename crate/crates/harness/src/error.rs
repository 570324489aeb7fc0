use std::path::PathBuf;

/// Harness failures, grouped by how the CLI reports them.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),

    #[error("{0}")]
    Divergence(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable category printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Incompatible(_) => "incompatible",
            HarnessError::Io { .. } => "io",
            HarnessError::Parse(_) => "parse",
            HarnessError::Divergence(_) => "divergence",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Incompatible(_) => 2,
            HarnessError::Io { .. } | HarnessError::Parse(_) => 3,
            HarnessError::Divergence(_) => 4,
        }
    }
}

impl From<dualnet_core::Error> for HarnessError {
    fn from(e: dualnet_core::Error) -> Self {
        use dualnet_core::Error as E;
        match e {
            E::Contract(m) => HarnessError::Config(m),
            E::Incompatible(m) => HarnessError::Incompatible(m),
            E::Io { path, source } => HarnessError::Io { path, source },
            e @ (E::Parse { .. } | E::Serde(_)) => HarnessError::Parse(e.to_string()),
            e @ E::Divergence { .. } => HarnessError::Divergence(e.to_string()),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
