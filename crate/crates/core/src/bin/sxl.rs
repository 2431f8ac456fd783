use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sxl_core::cli::dispatch(std::env::args()) as u8)
}
