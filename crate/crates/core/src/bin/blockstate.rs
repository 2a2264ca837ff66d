fn main() {
    std::process::exit(blockstate::cli::run(std::env::args_os()));
}
