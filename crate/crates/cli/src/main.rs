fn main() {
    std::process::exit(fontid_cli::run(std::env::args_os()));
}
