fn main() {
    std::process::exit(steerlabel_cli::dispatch(std::env::args_os()));
}
