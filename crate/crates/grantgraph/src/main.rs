use std::process::ExitCode;

use clap::Parser;
use grantgraph::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(report.exit_code as u8)
        }
    }
}
