fn main() {
    std::process::exit(fdd_cli::cli::main_with(std::env::args()));
}
