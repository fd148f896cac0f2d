fn main() {
    std::process::exit(corpusforge_cli::cli::run_from(std::env::args_os()));
}
