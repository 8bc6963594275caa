use std::process::ExitCode;

fn main() -> ExitCode {
    tdsent::cli::main_with_args(std::env::args_os())
}
