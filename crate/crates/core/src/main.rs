fn main() {
    env_logger::init();
    std::process::exit(dsqp::cli::run_cli(std::env::args_os()));
}
