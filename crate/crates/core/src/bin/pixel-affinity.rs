fn main() {
    std::process::exit(pixel_affinity::cli::main(std::env::args_os()));
}
