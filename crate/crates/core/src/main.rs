fn main() {
    std::process::exit(gpcond::cli::run());
}
