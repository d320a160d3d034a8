use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lgcol::cli::run(std::env::args_os()))
}
