fn main() {
    std::process::exit(limase::cli::run(std::env::args_os()));
}
