fn main() {
    std::process::exit(semmap::cli::main_with_args(std::env::args_os()));
}
