fn main() {
    std::process::exit(paramine::cli::run(std::env::args_os()));
}
