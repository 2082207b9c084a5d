use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEMO_FORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    nemo_forge_cli::main_with(std::env::args_os())
}
