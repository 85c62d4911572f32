fn main() {
    brag_augment::cli::main()
}
