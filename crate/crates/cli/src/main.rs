fn main() {
    std::process::exit(distest_cli::main_with_args(std::env::args_os()));
}
