use std::process::ExitCode;

fn main() -> ExitCode {
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = tenet_cli::cli::run_cli(std::env::args_os(), &mut out, &mut err);
    ExitCode::from(code as u8)
}
