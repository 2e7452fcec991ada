fn main() {
    std::process::exit(flimsr::cli::dispatch(std::env::args_os()));
}
