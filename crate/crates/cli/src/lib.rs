//! Library side of the `hemnet` command-line tool: config handling and the
//! subcommands, exposed so integration tests can drive them in-process.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

pub use config::{Command, RunConfig};
pub use error::{CliError, CliResult};

/// Loads the config, applies the seed override, and runs one subcommand.
///
/// Returns the files written, in the order they should be reported.
pub fn execute(cmd: Command, config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?.with_seed_override(seed);
    match cmd {
        Command::Gen => commands::gen::run(&cfg, out),
        Command::Train => commands::train::run(&cfg, out),
        Command::Gradcheck => commands::gradcheck::run(&cfg, out),
        Command::Sweep => commands::sweep::run(&cfg, out),
        Command::Fig3 => commands::fig3::run(&cfg, out),
    }
}
