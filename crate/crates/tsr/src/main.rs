use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    ExitCode::from(tsr::cli::run_with_args(std::env::args_os(), &mut stdout.lock()))
}
