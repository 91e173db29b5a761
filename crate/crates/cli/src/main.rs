fn main() {
    std::process::exit(msrnv_cli::run(std::env::args_os()));
}
