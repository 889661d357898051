//! Deterministic data parallelism.
//!
//! All Monte Carlo loops map an index range to per-sample values and then
//! reduce sequentially, so results are bit-identical with and without the
//! `parallel` feature and for any worker count.

/// Ordered parallel map over `0..n` (sequential without the feature).
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Honour `TORUSFLOW_THREADS` if set (no-op without the feature).
pub fn configure_threads() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(s) = std::env::var("TORUSFLOW_THREADS") {
            if let Ok(k) = s.trim().parse::<usize>() {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(k.max(1))
                    .build_global();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn map_preserves_order() {
        let v = super::map_indexed(100, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
