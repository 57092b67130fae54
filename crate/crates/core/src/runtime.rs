//! Process-level runtime knobs.

/// Worker-thread cap, read from `TRPS_LAB_THREADS`.
///
/// Defaults to 1 (fully sequential). Parallel code paths are written so that
/// results are bit-identical for every thread count.
pub fn worker_threads() -> usize {
    match std::env::var("TRPS_LAB_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(1),
        Err(_) => 1,
    }
}
