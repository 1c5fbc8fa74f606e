fn main() {
    std::process::exit(attestchain::cli::main_with_args(std::env::args_os()));
}
