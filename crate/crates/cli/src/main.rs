//! Exit codes: 0 success, 2 input error, 3 training divergence, 4 I/O failure.

use std::process::ExitCode;

fn main() -> ExitCode {
    match vdsr_cli::commands::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
