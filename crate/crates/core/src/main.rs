use std::process::ExitCode;

fn main() -> ExitCode {
    rdmini::cli::main()
}
