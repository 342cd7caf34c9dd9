fn main() {
    std::process::exit(rumsim::cli::run(std::env::args()));
}
