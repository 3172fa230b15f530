fn main() {
    std::process::exit(teleop_cli::main_with_args(std::env::args_os()));
}
