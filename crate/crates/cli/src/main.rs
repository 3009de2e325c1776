fn main() {
    std::process::exit(pendulum_cli::run_cli(std::env::args_os()));
}
