fn main() {
    std::process::exit(pofbsde::cli::run(std::env::args_os()));
}
