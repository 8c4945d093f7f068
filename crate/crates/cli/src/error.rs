use std::path::PathBuf;

use das_metrics::MetricError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] das_core::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 1 usage/config, 2 data schema, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use das_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::ConfigFile { .. } => 1,
            CliError::Data(_) | CliError::Metric(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Io { .. } => 1,
                E::NonFinite(_) | E::NonScalarLoss(_) | E::TapeConsumed => 3,
                E::Schema { .. }
                | E::Checkpoint(_)
                | E::Metric(_)
                | E::ShapeMismatch { .. }
                | E::InvalidShape { .. }
                | E::AllMasked(_)
                | E::EmptyInput(_)
                | E::IndexOutOfRange { .. } => 2,
            },
        }
    }
}
