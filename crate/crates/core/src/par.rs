//! Path-parallel helpers whose results do not depend on the worker count.
//!
//! Reductions split the path range into fixed-size chunks, reduce each chunk
//! sequentially, and combine chunk results in index order.

use rayon::prelude::*;

/// Paths per reduction chunk.
pub const CHUNK: usize = 1024;

/// `f(i)` for every path, in path order.
pub fn map_paths<T: Send>(paths: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..paths).into_par_iter().map(f).collect()
}

/// Deterministic sum of `f(i)` over paths, accumulated into a vector of length `len`.
pub fn sum_paths(
    paths: usize,
    len: usize,
    f: impl Fn(usize, &mut [f64]) + Sync + Send,
) -> Vec<f64> {
    let chunks = paths.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            for i in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}
