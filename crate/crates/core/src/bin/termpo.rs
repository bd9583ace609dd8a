fn main() {
    std::process::exit(termpo::cli::main_with_args(std::env::args_os()));
}
