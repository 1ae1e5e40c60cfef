use std::process::ExitCode;

fn main() -> ExitCode {
    pwnn_core::cli::main_with_args(std::env::args_os())
}
