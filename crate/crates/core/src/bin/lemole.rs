fn main() {
    std::process::exit(lemole::cli::run());
}
