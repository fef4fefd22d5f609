fn main() {
    std::process::exit(nlqkd_cli::main_with_args(std::env::args_os()));
}
