fn main() {
    std::process::exit(bagforge::cli::dispatch(std::env::args_os()));
}
