//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature, indexed maps run on the rayon global
//! pool; results are collected in index order so every reduction downstream is
//! bit-identical regardless of worker count. Without the feature (or with
//! [`Parallelism::Sequential`]) the same closures run on one thread.

/// Execution strategy for embarrassingly parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Single-threaded, in index order.
    Sequential,
    /// Rayon work-stealing pool (requires the `parallel` feature; falls back
    /// to sequential when compiled without it).
    #[default]
    Threaded,
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if par == Parallelism::Threaded {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = par;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in input order.
pub fn map_slice<'a, I, T, F>(par: Parallelism, items: &'a [I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&'a I) -> T + Sync + Send,
{
    map_indexed(par, items.len(), |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threaded_and_sequential_agree() {
        let f = |i: usize| (i as f64).sin() * 1e6;
        let a = map_indexed(Parallelism::Sequential, 1000, f);
        let b = map_indexed(Parallelism::Threaded, 1000, f);
        assert_eq!(a, b);
    }
}
