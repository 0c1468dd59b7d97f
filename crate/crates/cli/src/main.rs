fn main() {
    std::process::exit(clusterpose_cli::run(std::env::args_os()));
}
