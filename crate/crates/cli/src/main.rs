use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use glossa_cli::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let outcome = run(&cli, &mut out);
    let _ = out.flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            if let Some(id) = &e.trace_id {
                eprintln!("trace: {id}");
            }
            if e.retryable {
                eprintln!("this failure is transient; retrying may succeed");
            }
            ExitCode::FAILURE
        }
    }
}
