fn main() {
    std::process::exit(soup::cli::run(std::env::args_os()));
}
