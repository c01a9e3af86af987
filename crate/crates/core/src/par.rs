//! Order-preserving parallel map helpers.
//!
//! All batch-level fan-out in this crate goes through [`map_indexed`]: the map
//! runs on the rayon pool when the `parallel` feature is enabled, but results
//! are always collected in input order and reduced sequentially by the caller.
//! Outputs are therefore bit-identical for any thread count, and identical to
//! [`map_indexed_seq`], which is kept available for benchmarks and equality
//! tests.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(items, f)
    }
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}
