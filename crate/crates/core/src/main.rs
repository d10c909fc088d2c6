fn main() {
    std::process::exit(diffcascade::harness::cli::run(std::env::args_os()));
}
