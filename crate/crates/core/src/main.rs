fn main() {
    std::process::exit(darkviz::cli::run(std::env::args_os()));
}
