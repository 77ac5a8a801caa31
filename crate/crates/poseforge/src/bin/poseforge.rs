fn main() {
    std::process::exit(poseforge::cli::run(std::env::args_os()));
}
