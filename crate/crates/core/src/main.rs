fn main() {
    std::process::exit(ltc_core::cli::main_with_args(std::env::args_os()));
}
