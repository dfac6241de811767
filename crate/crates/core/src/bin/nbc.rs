fn main() {
    std::process::exit(nbc::cli::run(std::env::args_os()));
}
