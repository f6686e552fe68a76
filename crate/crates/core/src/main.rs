fn main() {
    std::process::exit(domgen::cli::main_with_args(std::env::args_os()));
}
