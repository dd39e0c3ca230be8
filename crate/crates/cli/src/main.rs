fn main() {
    std::process::exit(gbwm_cli::run(std::env::args_os()));
}
