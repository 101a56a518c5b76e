fn main() {
    std::process::exit(tamd_harness::cli::run(std::env::args_os()));
}
