fn main() {
    std::process::exit(idmix_core::io::cli::run(std::env::args_os()));
}
