use std::process::ExitCode;

fn main() -> ExitCode {
    kr_cli::run_from(std::env::args_os())
}
