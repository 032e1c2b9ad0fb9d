fn main() {
    std::process::exit(schrolab::cli::main_with_args(std::env::args_os()));
}
