fn main() {
    std::process::exit(sandpiper::cli::main());
}
