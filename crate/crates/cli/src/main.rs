use std::process::ExitCode;

use clap::Parser;
use rndscore_cli::report::{Results, REPORT_FILE};
use rndscore_cli::{execute, exit_code, resolve, summary, Cli, EXIT_CONFIG, EXIT_NUMERICAL};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = resolve(cli).and_then(|(task, config)| execute(task, &config).map(|doc| (doc, config)));
    match outcome {
        Ok((doc, config)) => {
            print!("{}", summary(&doc));
            println!("report: {}", config.out.join(REPORT_FILE).display());
            match doc.results {
                Results::Gradcheck(g) if !g.passed => ExitCode::from(EXIT_NUMERICAL as u8),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
