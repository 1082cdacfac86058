fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("STOB_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: could not size the thread pool: {e}");
                    std::process::exit(stob::cli::EXIT_FAILED);
                }
            }
            _ => {
                eprintln!("error: STOB_THREADS must be a positive integer, got {n:?}");
                std::process::exit(stob::cli::EXIT_USAGE);
            }
        }
    }
    std::process::exit(stob::cli::run(std::env::args_os()));
}
