//! Thin data-parallel layer. With the `parallel` feature the maps run on rayon,
//! otherwise sequentially. Results always come back in index order.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Like [`map`], but the first error in index order wins, so the reported
/// error does not depend on scheduling.
pub fn try_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map(n, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, v)| f(i, v));
}

/// Runs `f` on a dedicated pool of `threads` workers (0 means the global pool).
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
