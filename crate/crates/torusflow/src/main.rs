fn main() {
    std::process::exit(torusflow::runner::main_entry());
}
