fn main() {
    std::process::exit(eqm::cli::run(std::env::args()));
}
