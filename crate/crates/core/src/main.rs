fn main() {
    std::process::exit(active_offline_gp::cli::main_with_args(std::env::args_os()));
}
