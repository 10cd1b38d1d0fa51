fn main() {
    std::process::exit(deam::cli::main_with_args(std::env::args_os()));
}
