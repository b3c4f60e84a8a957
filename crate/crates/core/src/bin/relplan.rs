fn main() {
    std::process::exit(relplan::cli::run(std::env::args_os()));
}
