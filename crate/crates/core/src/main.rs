fn main() {
    std::process::exit(plsm_lab::cli::run(std::env::args_os()));
}
