fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    std::process::exit(lexiport_core::cli::main_with_args(std::env::args_os()));
}
