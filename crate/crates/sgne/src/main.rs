fn main() {
    std::process::exit(sgne::cli::run());
}
