fn main() {
    std::process::exit(ivsel::cli::run());
}
