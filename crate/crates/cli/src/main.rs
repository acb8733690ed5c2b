use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = fei_cli::Cli::parse();
    if let Err(e) = fei_cli::init_threads().and_then(|()| fei_cli::run(&cli.command)) {
        eprintln!(
            "{}",
            serde_json::json!({ "code": e.code(), "message": e.to_string() })
        );
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
