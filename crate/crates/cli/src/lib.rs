//! The `cf3d` command line: scenario generation, sampling, training,
//! evaluation, sweeps, heatmaps and benchmarks over on-disk run directories.

pub mod args;
pub mod commands;
pub mod error;
pub mod heatmap;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; failures print one line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return EXIT_USAGE;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("cf3d: {}", line.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cf3d: error: {}", e.msg.replace('\n', " "));
            e.code
        }
    }
}
