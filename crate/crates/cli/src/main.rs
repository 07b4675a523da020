fn main() {
    std::process::exit(xalign_cli::main_with_args(std::env::args_os()));
}
