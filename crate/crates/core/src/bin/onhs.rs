fn main() {
    std::process::exit(onh_stain::cli::run(std::env::args_os()));
}
