fn main() {
    std::process::exit(pssl_core::cli::run_from(std::env::args_os()));
}
