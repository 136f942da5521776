fn main() {
    std::process::exit(gpgroup::cli::run());
}
