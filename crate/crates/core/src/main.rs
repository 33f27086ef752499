fn main() {
    std::process::exit(shs_moments::cli::main_with_args(std::env::args_os()));
}
