fn main() {
    std::process::exit(corpusforge::cli::run(std::env::args_os()));
}
