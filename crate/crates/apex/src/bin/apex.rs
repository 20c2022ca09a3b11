fn main() {
    std::process::exit(apex::cli::run(std::env::args_os()));
}
