fn main() {
    std::process::exit(mar_kit::cli::run_cli(std::env::args().collect()));
}
