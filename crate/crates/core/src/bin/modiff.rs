fn main() {
    std::process::exit(modiff::cli::run(std::env::args_os()));
}
