fn main() {
    std::process::exit(evnet::cli::run(std::env::args_os()));
}
