//! Library half of the `logit-ensemble` binary: config loading and the three
//! subcommands, exposed so integration tests can drive them in-process.

pub mod config;
pub mod decode;
pub mod evaluate;
pub mod selftest;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// Some prompts, ids or suites failed.
    Partial = 1,
    /// The run could not start: bad flags, config or input files.
    Config = 2,
}

impl From<Exit> for std::process::ExitCode {
    fn from(e: Exit) -> Self {
        std::process::ExitCode::from(e as u8)
    }
}
