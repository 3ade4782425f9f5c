use std::process::ExitCode;

use clap::Parser;
use sstat_cli::report::RunReport;
use sstat_cli::{error_exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(outcome) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&outcome.report).expect("report serializes"));
            } else {
                print!("{}", outcome.text);
                if let Some(e) = &outcome.report.error {
                    eprintln!("error: {e}");
                }
            }
            if let Some(path) = &cli.report {
                if let Err(e) = outcome.report.write(path) {
                    eprintln!("error: cannot write report {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(path) = &cli.report {
                let mut report = RunReport::new(command_name(&cli), serde_json::Value::Null);
                report.fail(format!("{e:#}"));
                let _ = report.write(path);
            }
            error_exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn command_name(cli: &Cli) -> &'static str {
    use sstat_cli::Command::*;
    match cli.command {
        Generate { .. } => "generate",
        Convert { .. } => "convert",
        Validate { .. } => "validate",
        Sum { .. } => "sum",
        Suffstats { .. } => "suffstats",
        Analyze { .. } => "analyze",
        Pca { .. } => "pca",
        Pipeline { .. } => "pipeline",
    }
}
