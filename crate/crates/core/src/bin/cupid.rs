fn main() {
    std::process::exit(cupid::cli::run(std::env::args_os()));
}
