fn main() {
    std::process::exit(sav_nls::cli::main_with_args(std::env::args_os()));
}
