fn main() {
    std::process::exit(ironbench_cli::run());
}
