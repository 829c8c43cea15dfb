fn main() {
    std::process::exit(wlab::cli::run_from(std::env::args_os()));
}
