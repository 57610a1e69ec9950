fn main() {
    std::process::exit(affinorm::cli::main_exit_code());
}
