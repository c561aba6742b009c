fn main() {
    std::process::exit(grasp_afford::cli::run(std::env::args_os()));
}
