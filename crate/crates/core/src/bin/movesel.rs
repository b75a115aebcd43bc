fn main() {
    std::process::exit(movesel::cli::main_with_args(std::env::args_os()));
}
