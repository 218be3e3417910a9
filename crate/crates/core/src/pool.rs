use rayon::ThreadPoolBuilder;

/// Runs `f` on a dedicated pool of `jobs` threads (`0` = rayon's default).
pub(crate) fn install<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
