fn main() {
    std::process::exit(trapcool::cli::run(std::env::args_os()));
}
