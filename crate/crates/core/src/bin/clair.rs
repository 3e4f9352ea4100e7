fn main() {
    std::process::exit(clair::cli::run(std::env::args_os()));
}
