use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use shadowpose_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!(
                "{}",
                json!({"status": "error", "kind": e.kind(), "message": e.to_string()})
            );
            ExitCode::from(e.exit_code())
        }
    }
}
