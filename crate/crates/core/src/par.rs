//! Deterministic chunked map-reduce.
//!
//! All data-parallel kernels split their input into fixed-size chunks,
//! compute one partial result per chunk, and merge the partials in chunk
//! order. The chunk boundaries do not depend on the thread count, so the
//! floating-point addition order (and hence the result bits) is the same
//! for any pool size and for the sequential fallback.

/// Fixed chunk size for plan-entry kernels.
pub const CHUNK: usize = 256;

#[cfg(feature = "parallel")]
pub fn chunked_map<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync,
{
    use rayon::prelude::*;
    items.par_chunks(chunk).map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn chunked_map<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    F: Fn(&[T]) -> R,
{
    items.chunks(chunk).map(|c| f(c)).collect()
}

/// Ordered map over independent work items (parameter sweeps).
#[cfg(feature = "parallel")]
pub fn ordered_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn ordered_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}
