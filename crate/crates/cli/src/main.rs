fn main() {
    std::process::exit(adasize_cli::run(std::env::args_os()));
}
