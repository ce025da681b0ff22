fn main() {
    std::process::exit(sparselab::cli::run(std::env::args_os()));
}
