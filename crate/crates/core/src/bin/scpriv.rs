fn main() {
    std::process::exit(sc_privacy::cli::main_with_args(std::env::args_os()));
}
