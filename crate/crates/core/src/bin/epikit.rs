fn main() {
    std::process::exit(epikit::cli::run_command(std::env::args_os()));
}
