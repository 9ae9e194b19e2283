fn main() {
    std::process::exit(neusurf::cli::run(std::env::args_os()));
}
