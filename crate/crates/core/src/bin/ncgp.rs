fn main() {
    std::process::exit(ncgp::cli::run(std::env::args_os()));
}
