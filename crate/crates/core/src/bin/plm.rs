fn main() {
    std::process::exit(plm_core::harness::cli::main_with_args(std::env::args_os()));
}
