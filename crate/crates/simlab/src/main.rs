fn main() {
    std::process::exit(splinenet_simlab::cli::run(std::env::args_os()));
}
