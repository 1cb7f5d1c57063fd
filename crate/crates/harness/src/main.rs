fn main() {
    std::process::exit(streetnav_harness::cli::main_with_args(std::env::args_os()));
}
