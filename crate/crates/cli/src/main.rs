fn main() {
    std::process::exit(impress_cli::run_command(std::env::args_os()));
}
