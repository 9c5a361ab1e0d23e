//! Worker-count control shared by the CLI and tests.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SEMULATOR_THREADS";

/// Thread count from `SEMULATOR_THREADS`, or the machine parallelism.
pub fn configured_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Installs the global rayon pool with [`configured_threads`] workers.
/// Later calls are no-ops.
pub fn init_pool() -> usize {
    let n = configured_threads();
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    rayon::current_num_threads()
}
