fn main() {
    std::process::exit(groupform::cli::main_with_args(std::env::args_os()));
}
