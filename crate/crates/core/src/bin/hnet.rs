fn main() {
    std::process::exit(hnet::cli::run(std::env::args_os()));
}
