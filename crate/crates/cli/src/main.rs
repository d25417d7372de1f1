fn main() {
    std::process::exit(rs_engine_cli::main_with_args(std::env::args_os()));
}
