fn main() {
    std::process::exit(sohforge::cli::run(std::env::args_os()));
}
