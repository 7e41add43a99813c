use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = std::panic::catch_unwind(|| scenewalk::cli::run(std::env::args_os())).unwrap_or(2);
    ExitCode::from(code)
}
