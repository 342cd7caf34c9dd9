//! Fixed-chunk map over index ranges with order-preserving results.
//!
//! Chunk boundaries depend only on `n` and the chunk size, and results are
//! returned in chunk order, so reductions over them are identical whether the
//! chunks ran on one thread or many.

use alloc::vec::Vec;
use core::ops::Range;

pub(crate) const CHUNK: usize = 64;

pub(crate) fn chunks(n: usize, size: usize) -> impl Iterator<Item = Range<usize>> + Clone {
    let size = size.max(1);
    (0..n.div_ceil(size)).map(move |c| c * size..((c + 1) * size).min(n))
}

#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(n: usize, size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let ranges: Vec<Range<usize>> = chunks(n, size).collect();
    ranges.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(n: usize, size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunks(n, size).map(f).collect()
}
