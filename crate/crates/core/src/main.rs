use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("CONFORMAL_SETS_THREADS") {
        match threads.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            _ => log::warn!("ignoring invalid CONFORMAL_SETS_THREADS value '{threads}'"),
        }
    }
    conformal_sets::cli::main_with_args(std::env::args_os())
}
