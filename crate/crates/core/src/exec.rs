//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the parallel variant runs on the
//! rayon pool; without it every call is sequential. Outputs are always in
//! index order so callers see identical results either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `f(i)` for `i in 0..n`, collected in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Map over `0..n` and reduce with an associative `combine`.
    ///
    /// `combine` must be order-insensitive for the result to be independent
    /// of scheduling (e.g. a max with a total tie-break).
    pub fn map_reduce<T, F, R>(self, n: usize, identity: T, f: F, combine: R) -> T
    where
        T: Send + Sync + Clone,
        F: Fn(usize) -> T + Sync + Send,
        R: Fn(T, T) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n)
                .into_par_iter()
                .map(f)
                .reduce(|| identity.clone(), &combine),
            _ => (0..n).map(f).fold(identity, combine),
        }
    }
}
