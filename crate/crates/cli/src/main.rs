fn main() {
    std::process::exit(cf3d_cli::run(std::env::args_os()));
}
