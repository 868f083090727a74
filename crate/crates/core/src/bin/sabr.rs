fn main() {
    std::process::exit(sabr_core::cli::run(std::env::args_os()));
}
