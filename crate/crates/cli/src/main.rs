fn main() {
    std::process::exit(dymixop_cli::run(std::env::args_os()));
}
