fn main() {
    std::process::exit(vfds::cli::run(std::env::args_os()));
}
