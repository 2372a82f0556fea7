fn main() {
    let code = torsion::cli::run_cli(std::env::args().collect());
    std::process::exit(code);
}
