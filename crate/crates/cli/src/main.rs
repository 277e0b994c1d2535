fn main() {
    std::process::exit(deskbot_cli::run(std::env::args_os()));
}
