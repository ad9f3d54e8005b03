fn main() {
    std::process::exit(tlnmf::cli::main_with_args(std::env::args_os()));
}
