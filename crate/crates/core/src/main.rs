fn main() {
    std::process::exit(saff::cli::main_with_args(std::env::args_os()));
}
