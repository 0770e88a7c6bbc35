fn main() {
    std::process::exit(scoregrad::cli::main());
}
