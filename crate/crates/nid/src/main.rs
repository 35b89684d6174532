fn main() {
    std::process::exit(nid::cli::run(std::env::args_os()));
}
