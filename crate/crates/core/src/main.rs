fn main() {
    std::process::exit(twopoint::cli::run(std::env::args_os()));
}
