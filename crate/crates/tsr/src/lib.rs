//! File formats, dataset handling and the `tsr` command line on top of
//! [`tsr_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod pgm;
pub mod run;

pub use tsr_core;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Pgm(#[from] pgm::PgmError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Core(#[from] tsr_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
