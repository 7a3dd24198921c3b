fn main() {
    std::process::exit(grnn_lab::run(std::env::args_os()));
}
