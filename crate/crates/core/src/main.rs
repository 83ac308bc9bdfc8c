fn main() {
    std::process::exit(trendlab::cli::run(std::env::args_os()));
}
