fn main() {
    std::process::exit(pbl_core::cli::main());
}
