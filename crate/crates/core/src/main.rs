use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dampwave::cli::run(std::env::args_os()))
}
