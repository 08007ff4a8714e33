fn main() {
    std::process::exit(ks_moment::cli::run(std::env::args_os()));
}
