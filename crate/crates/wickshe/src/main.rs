fn main() {
    std::process::exit(wickshe::cli::run(std::env::args_os()));
}
