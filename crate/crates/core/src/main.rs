fn main() {
    std::process::exit(ddspec::cli::main());
}
