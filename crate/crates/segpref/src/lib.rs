//! File formats, judge backends and the `segpref` command-line tool.
//!
//! Algorithms live in [`segpref_core`]; this crate adds JSONL/TOML IO, the
//! replay and remote judges, and the subcommand plumbing.

pub mod cli;
pub mod config;
pub mod io;
pub mod judge;
pub mod pipeline;
pub mod records;

/// Why a subcommand stopped. Input problems exit with 1, failures of an
/// external service with 2.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    External(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::External(_) => 2,
        }
    }
}

impl From<io::InputError> for Failure {
    fn from(e: io::InputError) -> Self {
        Failure::Input(e.to_string())
    }
}
