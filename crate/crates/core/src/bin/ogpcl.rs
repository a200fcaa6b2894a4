fn main() {
    std::process::exit(ogpcl::cli::run(std::env::args_os()));
}
