fn main() -> std::process::ExitCode {
    navinstruct::main_with_args(std::env::args_os())
}
