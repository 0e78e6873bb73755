//! Chunked loops over collocation points, parallel when the `parallel`
//! feature is on, with a reduction-order switch.
//!
//! `Reduction::Ordered` sums fixed-size chunks in index order, so the result
//! is bit-identical no matter how many threads ran the chunks (or whether the
//! sequential fallback ran them). `Reduction::Fastest` lets the runtime
//! combine partial sums in whatever order finishes first.

use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for point loops. Fixed so that the ordered reduction tree
/// does not depend on thread count.
pub const CHUNK: usize = 1024;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route every chunk loop through the sequential path even when the
/// `parallel` feature is compiled in. The benchmark suite uses this to
/// compare both paths inside one binary.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when [`force_sequential`] is active or the crate was built without
/// the `parallel` feature.
pub fn is_sequential() -> bool {
    if cfg!(not(feature = "parallel")) {
        return true;
    }
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

static SEQUENTIAL_GUARD: std::sync::Mutex<()> = std::sync::Mutex::new(());

struct RestoreMode(bool);

impl Drop for RestoreMode {
    fn drop(&mut self) {
        FORCE_SEQUENTIAL.store(self.0, Ordering::SeqCst);
    }
}

/// Run `f` with the sequential fallback forced on, restoring the previous
/// mode afterwards (also on panic). Comparison harnesses should use this
/// rather than toggling the flag directly so concurrent callers serialize.
pub fn with_sequential<R>(f: impl FnOnce() -> R) -> R {
    let _guard = SEQUENTIAL_GUARD.lock().unwrap_or_else(|e| e.into_inner());
    let restore = RestoreMode(FORCE_SEQUENTIAL.load(Ordering::SeqCst));
    FORCE_SEQUENTIAL.store(true, Ordering::SeqCst);
    let out = f();
    drop(restore);
    out
}

/// How partial sums over collocation points are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Fixed chunking, chunks combined in index order. Bit-reproducible.
    Ordered,
    /// Partial sums combined in completion order. Fastest, not reproducible.
    Fastest,
}

fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect()
}

/// Apply `f` to each chunk of `0..n` and collect the results in chunk order.
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(n);
    #[cfg(feature = "parallel")]
    if !is_sequential() {
        return ranges.into_par_iter().map(f).collect();
    }
    ranges.into_iter().map(f).collect()
}

/// Sum `term(i)` over `i in 0..n` under the given reduction order.
pub fn sum_indexed<F>(n: usize, red: Reduction, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    match red {
        Reduction::Ordered => map_chunks(n, |r| r.map(&term).sum::<f64>())
            .into_iter()
            .sum(),
        Reduction::Fastest => {
            #[cfg(feature = "parallel")]
            if !is_sequential() {
                return (0..n).into_par_iter().map(term).sum();
            }
            (0..n).map(term).sum()
        }
    }
}

/// Accumulate a `dim`-vector: `fill(i, acc)` adds point `i`'s contribution
/// into `acc`. Chunk partials are merged in index order under `Ordered`.
pub fn sum_vectors<F>(n: usize, dim: usize, red: Reduction, fill: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk_sum = |r: Range<usize>| {
        let mut acc = vec![0.0; dim];
        for i in r {
            fill(i, &mut acc);
        }
        acc
    };
    let partials: Vec<Vec<f64>> = match red {
        Reduction::Ordered => map_chunks(n, chunk_sum),
        Reduction::Fastest => {
            #[cfg(feature = "parallel")]
            if !is_sequential() {
                return (0..n.div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|c| chunk_sum(c * CHUNK..((c + 1) * CHUNK).min(n)))
                    .reduce(
                        || vec![0.0; dim],
                        |mut a, b| {
                            for (x, y) in a.iter_mut().zip(&b) {
                                *x += y;
                            }
                            a
                        },
                    );
            }
            map_chunks(n, chunk_sum)
        }
    };
    let mut out = vec![0.0; dim];
    for p in partials {
        for (x, y) in out.iter_mut().zip(&p) {
            *x += y;
        }
    }
    out
}

/// Fill a preallocated slice in parallel: `f(i)` computes element `i`.
/// Element writes are independent, so the result does not depend on order.
pub fn fill_slice<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !is_sequential() {
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        return;
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}
