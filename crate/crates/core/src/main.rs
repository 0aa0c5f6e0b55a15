fn main() {
    std::process::exit(regprod::cli::run(std::env::args_os()));
}
