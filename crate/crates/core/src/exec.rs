//! Data-parallel helpers.
//!
//! Hot loops (per-grid-point Jacobians, per-block solver terms, per-pair
//! validation) go through [`Execution`]. With the `parallel`
//! feature the `Parallel` mode uses rayon; without it every mode runs
//! sequentially. Both modes produce results in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode will actually fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Map then fold with an associative `combine`. The sequential and
    /// parallel paths may group additions differently.
    pub fn map_reduce<T, U, F, R>(self, items: &[T], identity: U, f: F, combine: R) -> U
    where
        T: Sync,
        U: Send + Sync + Clone,
        F: Fn(&T) -> U + Sync + Send,
        R: Fn(U, U) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items
                .par_iter()
                .map(&f)
                .reduce(|| identity.clone(), &combine);
        }
        items.iter().map(f).fold(identity, combine)
    }
}
