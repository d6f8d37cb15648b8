use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sentidial_cli::run(std::env::args_os()))
}
