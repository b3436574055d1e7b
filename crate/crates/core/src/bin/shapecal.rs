fn main() {
    std::process::exit(shapecal::cli::main_from_env());
}
