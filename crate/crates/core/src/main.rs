fn main() {
    std::process::exit(fhdr::cli::run(std::env::args_os()));
}
