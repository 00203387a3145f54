fn main() {
    std::process::exit(cfx::cli::dispatch(std::env::args_os()));
}
