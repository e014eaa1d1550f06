fn main() -> std::process::ExitCode {
    votenet::cli::main_with_args(std::env::args_os())
}
