use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(braess_cli::app::main_with(
        std::env::args_os(),
        &mut io::stdout().lock(),
    ))
}
