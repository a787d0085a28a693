fn main() {
    std::process::exit(herding_market::cli::main_with_args(std::env::args_os()));
}
