fn main() {
    std::process::exit(frulab_cli::run(std::env::args_os().collect()));
}
