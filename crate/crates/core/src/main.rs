fn main() {
    std::process::exit(gisd::cli::run(std::env::args_os()));
}
