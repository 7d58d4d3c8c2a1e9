fn main() {
    std::process::exit(ataml_cli::run());
}
