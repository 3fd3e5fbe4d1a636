use std::process::ExitCode;

use clap::Parser;
use dermtriage_cli::args::Cli;
use dermtriage_cli::{commands, error_kind, exit_code};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match commands::execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
            eprintln!("{report}");
            ExitCode::from(exit_code(&e))
        }
    }
}
