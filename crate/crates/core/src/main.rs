fn main() {
    std::process::exit(assim::cli::run_cli(std::env::args_os()));
}
