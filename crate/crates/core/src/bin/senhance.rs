fn main() {
    std::process::exit(senhance::cli::run(std::env::args_os()));
}
