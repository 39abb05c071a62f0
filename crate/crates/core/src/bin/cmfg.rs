fn main() {
    std::process::exit(constrained_mfg::cli::main_from(std::env::args_os()));
}
