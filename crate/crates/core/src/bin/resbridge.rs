fn main() {
    std::process::exit(resbridge::cli::main_with_args(std::env::args_os()));
}
