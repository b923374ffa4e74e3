fn main() {
    std::process::exit(sckd::cli::run(std::env::args_os()));
}
