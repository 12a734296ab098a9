fn main() {
    std::process::exit(ovwave_cli::run(std::env::args_os()));
}
