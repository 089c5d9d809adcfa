fn main() {
    std::process::exit(ergodic_mlmc::cli::run(std::env::args_os()));
}
