fn main() {
    std::process::exit(riskpipe_cli::run(std::env::args_os()));
}
