fn main() {
    std::process::exit(ozlab_cli::run(std::env::args_os()));
}
