fn main() -> std::process::ExitCode {
    fedzo::harness::cli::main_with_args(std::env::args_os())
}
