fn main() {
    env_logger::init();
    std::process::exit(ifm::cli::run(std::env::args_os()));
}
