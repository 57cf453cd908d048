fn main() {
    std::process::exit(concept_lm::cli::main());
}
