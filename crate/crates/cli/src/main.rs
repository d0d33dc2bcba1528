fn main() {
    std::process::exit(mast_cli::run(std::env::args_os()));
}
