fn main() {
    std::process::exit(dicke_cli::main_with_args(std::env::args_os()));
}
