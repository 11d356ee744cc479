fn main() {
    std::process::exit(gemm_gan::cli::run(std::env::args_os()));
}
