fn main() {
    std::process::exit(xdt_core::cli::run(std::env::args_os()));
}
