fn main() {
    std::process::exit(votecal::cli::main_with_args(std::env::args_os()));
}
