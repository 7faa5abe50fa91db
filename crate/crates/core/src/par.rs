//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) batch operations fan out over
//! rayon's global pool. Without it, [`Execution::Parallel`] silently runs
//! sequentially so callers never need their own `cfg` gates.

/// How a batch operation should be executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

impl Execution {
    /// Parallel when the crate was built with the `parallel` feature.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Default for Execution {
    fn default() -> Self {
        Self::auto()
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Fold each chunk from `identity`, then combine partial results with
/// `reduce`. `reduce` must be associative for the result to be independent of
/// the execution mode.
pub fn fold_reduce<T, A, I, F, R>(exec: Execution, items: &[T], identity: I, fold: F, reduce: R) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().fold(&identity, &fold).reduce(&identity, &reduce)
        }
        _ => {
            let _ = &reduce;
            items.iter().fold(identity(), fold)
        }
    }
}
