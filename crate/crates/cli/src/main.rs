fn main() {
    std::process::exit(choquard_cli::dispatch(std::env::args_os()));
}
