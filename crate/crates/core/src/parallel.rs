//! Data-parallel helpers. With the `parallel` feature the map runs on the rayon
//! pool; without it (or when [`Execution::Sequential`] is requested) it runs in
//! order on the calling thread. Output order always matches input order, so
//! every downstream reduction is deterministic regardless of the backend.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether this build can actually run things in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

pub fn map_range<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_on_both_backends() {
        let xs: Vec<u64> = (0..1000).collect();
        let par = map(&xs, Execution::Parallel, |x| x * x);
        let seq = map(&xs, Execution::Sequential, |x| x * x);
        assert_eq!(par, seq);
        assert_eq!(map_range(5, Execution::Parallel, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
