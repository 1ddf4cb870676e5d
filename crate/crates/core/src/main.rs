fn main() {
    std::process::exit(tfcovr::cli::main());
}
