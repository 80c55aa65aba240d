fn main() {
    std::process::exit(wscl_cli::cli::main_with(std::env::args_os()));
}
