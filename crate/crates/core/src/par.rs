//! Compile-time selection between rayon and plain iterators.
//!
//! Every helper preserves input order in its output, so callers that reduce
//! the returned vectors sequentially get results that do not depend on the
//! thread count or on whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for fixed-order partial reductions.
pub const REDUCE_CHUNK: usize = 64;

/// `(0..n).map(f).collect()`, possibly in parallel.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maps `f(chunk_index, chunk)` over fixed-size chunks of `items`.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &[T]) -> U + Sync + Send,
{
    items
        .par_chunks(chunk.max(1))
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &[T]) -> U + Sync + Send,
{
    items
        .chunks(chunk.max(1))
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// Runs `f(chunk_index, chunk)` over fixed-size mutable chunks.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(items: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    items
        .par_chunks_mut(chunk.max(1))
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(items: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    items
        .chunks_mut(chunk.max(1))
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Fixed-order sum of per-chunk partial vectors into `out`.
pub fn accumulate_into(out: &mut [f64], partials: &[Vec<f64>]) {
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_keeps_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunks_cover_input() {
        let items: Vec<u32> = (0..130).collect();
        let sums = map_chunks(&items, 64, |_, c| c.iter().sum::<u32>());
        assert_eq!(sums.len(), 3);
        assert_eq!(sums.iter().sum::<u32>(), items.iter().sum::<u32>());
    }
}
