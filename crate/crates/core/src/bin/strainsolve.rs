fn main() {
    std::process::exit(strainsolve::cli::cli_main(std::env::args_os()));
}
