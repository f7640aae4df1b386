fn main() {
    std::process::exit(evdn::cli::run(std::env::args_os()));
}
