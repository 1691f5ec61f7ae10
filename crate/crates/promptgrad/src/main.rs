fn main() {
    std::process::exit(promptgrad::cli::main_with_args(std::env::args_os()));
}
