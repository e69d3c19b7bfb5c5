fn main() {
    std::process::exit(alspca_cli::main_with_args(std::env::args_os()));
}
