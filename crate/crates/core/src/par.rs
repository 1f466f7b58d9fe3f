//! Per-bag data parallelism. With the `parallel` feature, [`Exec::Parallel`]
//! maps over bags on the ambient rayon pool; otherwise everything runs in
//! order on the calling thread. Results are always collected in bag order so
//! reductions done by the caller are bit-identical for any worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    #[default]
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Exec {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

pub(crate) fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

pub(crate) fn for_each_mut<T, F>(exec: Exec, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t)),
        _ => items.iter_mut().enumerate().for_each(|(i, t)| f(i, t)),
    }
}

/// Sums in index order.
pub(crate) fn ordered_sum(parts: impl IntoIterator<Item = f64>) -> f64 {
    parts.into_iter().fold(0.0, |acc, v| acc + v)
}
