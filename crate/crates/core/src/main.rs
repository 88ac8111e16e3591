fn main() {
    std::process::exit(seqest::cli::main());
}
