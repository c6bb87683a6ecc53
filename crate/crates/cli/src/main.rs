fn main() {
    std::process::exit(rds_cli::main_with_args(std::env::args().collect()));
}
