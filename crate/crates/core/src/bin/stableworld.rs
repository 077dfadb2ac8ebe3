fn main() {
    std::process::exit(stableworld::cli::run(std::env::args_os()));
}
