fn main() {
    std::process::exit(stratdet_cli::main_with_args(std::env::args_os()));
}
