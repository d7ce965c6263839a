fn main() {
    std::process::exit(ssbnn::cli::run_command(std::env::args_os()));
}
