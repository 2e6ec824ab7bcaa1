fn main() {
    env_logger::init();
    std::process::exit(docdet::run(std::env::args_os()));
}
