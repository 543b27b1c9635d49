fn main() {
    std::process::exit(covsteer::cli::main_entry());
}
