fn main() {
    std::process::exit(bplc::cli::run(std::env::args_os()));
}
