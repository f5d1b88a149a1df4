use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = sentifuse::cli::run_from(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
