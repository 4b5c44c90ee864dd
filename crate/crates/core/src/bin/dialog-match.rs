fn main() {
    dialog_match::cli::main()
}
