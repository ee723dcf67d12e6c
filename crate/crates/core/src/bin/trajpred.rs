fn main() {
    std::process::exit(trajpred::cli::main_with_args(std::env::args_os()));
}
