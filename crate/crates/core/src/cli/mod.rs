pub mod approximate;
pub mod manifest;
pub mod train;
pub mod verify;

use superexpressive::Error;

/// Command failure mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or invalid inputs.
    Usage(String),
    /// A search or training run ended without meeting its target; outputs were written.
    Search(String),
    /// A property or golden-file check failed.
    Verify(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Search(_) => 2,
            Failure::Verify(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Search(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SearchFailure { .. }
            | Error::WitnessNotAchieved { .. }
            | Error::DecompositionFailure { .. }
            | Error::Diverged { .. } => Failure::Search(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
