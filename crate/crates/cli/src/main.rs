fn main() {
    std::process::exit(deelbo_cli::cli::main_with_args(std::env::args_os()));
}
