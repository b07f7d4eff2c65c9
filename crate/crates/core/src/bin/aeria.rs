fn main() {
    std::process::exit(aeria::cli::run(std::env::args_os()));
}
