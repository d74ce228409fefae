fn main() {
    std::process::exit(latmorph_cli::run(std::env::args_os()));
}
