fn main() {
    std::process::exit(rulkit::cli::main_with(std::env::args_os()));
}
