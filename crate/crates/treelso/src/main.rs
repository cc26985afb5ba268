fn main() {
    std::process::exit(treelso::cli::run(std::env::args_os()));
}
