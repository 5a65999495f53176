fn main() {
    std::process::exit(latentcd_cli::main_with_args(std::env::args_os()));
}
