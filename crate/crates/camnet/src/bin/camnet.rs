fn main() {
    std::process::exit(camnet::cli::run(std::env::args_os()));
}
