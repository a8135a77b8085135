fn main() {
    std::process::exit(driftguard::cli::run());
}
