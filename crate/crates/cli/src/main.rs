use std::io::Write;
use std::process::ExitCode;

use binned_gp_cli::commands::{configure_threads, run};

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = configure_threads().and_then(|()| run(std::env::args_os(), &mut out));
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("binned-gp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
