//! Front end of the `rndscore` tool: configuration, commands and reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use rndscore::{Error, ErrorKind};

pub use args::{apply_flags, Cli, Command};
pub use commands::{execute, summary, Task};
pub use config::ExperimentConfig;
pub use report::ReportDocument;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config | ErrorKind::Usage => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

/// Resolves defaults, the config file and the flags into one config.
pub fn resolve(cli: Cli) -> Result<(Task, ExperimentConfig), Error> {
    let mut config = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let task = match &cli.command {
        Command::Score(_) => Task::Score,
        Command::Sweep(_) => Task::Sweep,
        Command::Ablate(_) => Task::Ablate,
        Command::Baseline(_) => Task::Baseline,
        Command::Synth(_) => Task::Synth,
        Command::Gradcheck => Task::Gradcheck,
    };
    apply_flags(&mut config, &cli.global, cli.command);
    Ok((task, config))
}
