fn main() {
    std::process::exit(tdlab_cli::run());
}
