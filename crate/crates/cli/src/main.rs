use std::process::ExitCode;

use clap::Parser;

use chunkrnn::config::{unknown_experiment, EXPERIMENTS};
use chunkrnn::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if !EXPERIMENTS.contains(&cli.experiment.as_str()) {
        eprintln!("error: {}", unknown_experiment(&cli.experiment));
        return ExitCode::from(2);
    }
    match chunkrnn::run(&cli) {
        Ok(done) => {
            eprintln!("wrote {} files to {}", done.manifest.files.len(), cli.out.display());
            match done.failure {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::FAILURE
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
