fn main() {
    std::process::exit(poseprior::cli::run(std::env::args_os()));
}
