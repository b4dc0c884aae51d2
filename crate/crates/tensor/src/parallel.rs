//! Execution policy for the data-parallel kernels.
//!
//! With the `parallel` feature the batch loops of the convolution kernels and
//! large elementwise maps run on rayon's pool; without it (or after
//! `set_parallelism(Parallelism::Sequential)`) every kernel runs the same
//! code path on the calling thread. Work is always split into fixed-size
//! chunks and reduced in index order, so results are bitwise identical under
//! both policies and for any pool size.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Rayon,
}

static USE_RAYON: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Elementwise maps below this length never fan out.
pub const ELEMENTWISE_GRAIN: usize = 1 << 15;

pub fn set_parallelism(p: Parallelism) {
    USE_RAYON.store(p == Parallelism::Rayon && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallelism() -> Parallelism {
    if USE_RAYON.load(Ordering::Relaxed) {
        Parallelism::Rayon
    } else {
        Parallelism::Sequential
    }
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if parallelism() == Parallelism::Rayon {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism() == Parallelism::Rayon {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
