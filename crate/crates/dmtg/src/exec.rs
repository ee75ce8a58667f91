//! Job fan-out. Independent jobs (method-seed pairs, per-partition
//! trainings, pairwise tables) run data-parallel through rayon when the
//! `parallel` feature is on and more than one worker is requested; otherwise
//! they run on a plain sequential iterator. Results always come back in
//! input order, so anything derived from them is identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`. `workers <= 1` forces the sequential path; with
/// the `parallel` feature off every call is sequential regardless.
pub fn map_jobs<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        return items.into_par_iter().map(f).collect();
    }
    let _ = workers;
    items.into_iter().map(f).collect()
}

/// Sizes the global thread pool. Call once at startup; later calls are
/// ignored (rayon installs the pool on first use).
#[cfg(feature = "parallel")]
pub fn init_workers(workers: usize) {
    if workers > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
pub fn init_workers(_workers: usize) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_sequential_and_parallel() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_jobs(items.clone(), 1, |x| x * x);
        let par = map_jobs(items, 8, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
