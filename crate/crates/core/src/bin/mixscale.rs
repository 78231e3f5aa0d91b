fn main() {
    std::process::exit(mixscale::cli::main_with_args(std::env::args_os()));
}
