fn main() {
    std::process::exit(abds_cli::main_with_args(std::env::args_os()));
}
