//! Subcommands behind the `groupcast` binary, callable in-process.

pub mod commands;
pub mod config;
mod tables;

use std::fmt;

pub use commands::{
    cmd_evaluate, cmd_panel_validate, cmd_report, cmd_synth, cmd_train, EvaluateOptions, Stub,
};
pub use config::{RunConfig, DEFAULT_OUT, OUT_ENV};

/// Process exit statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// A defect or an unclassified failure.
    Internal = 1,
    Config = 2,
    TrainAbort = 3,
    Load = 4,
    MalformedData = 5,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// An error together with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: groupcast::Error,
}

impl Failure {
    pub fn new(exit: Exit, error: groupcast::Error) -> Self {
        Self { exit, error }
    }

    pub fn load(error: groupcast::Error) -> Self {
        Self::new(Exit::Load, error)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for Failure {}

/// Default classification; commands override it where the phase matters
/// (a schema error while loading a panel for evaluation is a load failure).
impl From<groupcast::Error> for Failure {
    fn from(error: groupcast::Error) -> Self {
        use groupcast::Error as E;
        let exit = match &error {
            E::Config(_) | E::Unstable { .. } => Exit::Config,
            E::NonFinite { .. } => Exit::TrainAbort,
            E::Checkpoint(_) | E::Io { .. } => Exit::Load,
            E::Schema(_) | E::Data(_) | E::Degenerate(_) | E::Csv(_) | E::Json(_) => {
                Exit::MalformedData
            }
            E::Shape { .. } | E::Contract(_) => Exit::Internal,
        };
        Self { exit, error }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Runs `f` on a pool of `workers` threads (all cores when `None`). Results
/// never depend on the thread count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Failure::new(Exit::Config, groupcast::Error::Config(e.to_string())))?;
    Ok(pool.install(f))
}
