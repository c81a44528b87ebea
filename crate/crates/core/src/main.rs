fn main() {
    std::process::exit(rationale::cli::execute(std::env::args()));
}
