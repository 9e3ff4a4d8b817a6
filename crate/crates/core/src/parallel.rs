//! Order-preserving map over independent items.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it (or through [`seq_map`]) items are processed in order on the
//! calling thread. Both return results in input order, so reductions over
//! the output are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn seq_map<T, U>(items: &[T], f: impl Fn(usize, &T) -> U) -> Vec<U> {
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync + Send) -> Vec<U> {
    seq_map(items, f)
}

/// Number of worker threads `par_map` may use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
