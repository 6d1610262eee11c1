fn main() {
    std::process::exit(sloth_cli::dispatch(std::env::args_os()));
}
