fn main() {
    std::process::exit(sinr::cli::run_with_args(std::env::args_os()));
}
