fn main() {
    std::process::exit(intmed::cli::run(std::env::args_os()));
}
