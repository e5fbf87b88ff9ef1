fn main() {
    std::process::exit(suction::cli::run(std::env::args_os()));
}
