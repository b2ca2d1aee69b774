//! Worker-pool mapping for evaluation fan-out.
//!
//! With the `parallel` feature (on by default) [`map`] spreads work over
//! a rayon pool; the `PERIMID_THREADS` environment variable caps the
//! pool size. Without the feature, [`map`] is the sequential loop.
//! Output order always matches input order, so results are identical
//! either way.

#[cfg(feature = "parallel")]
use std::sync::OnceLock;

/// Sequential mapping, always available; benches compare against it.
pub fn map_seq<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads: usize = std::env::var("PERIMID_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .ok()
    })
    .as_ref()
}

/// Order-preserving parallel map over a frozen context.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    match pool() {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.par_iter().map(&f).collect(),
    }
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn map<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    map_seq(items, f)
}
