//! Execution strategy for the data-parallel loops (prior draws, exchangeability
//! blocks, posterior draws, Monte Carlo replications).
//!
//! Every parallel unit owns an RNG stream derived from its index, so results do
//! not depend on the strategy or on the number of worker threads. Without the
//! `parallel` feature, [`Execution::Parallel`] runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `true` when this build can actually run work on several threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over a slice, returning results in slice order.
    pub fn map_slice<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Runs `f` inside a pool capped at `threads` workers. `threads == 1`
    /// degrades to sequential execution.
    pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
    where
        R: Send,
        F: FnOnce(Execution) -> R + Send,
    {
        match threads {
            Some(1) => f(Execution::Sequential),
            #[cfg(feature = "parallel")]
            Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                Ok(pool) => pool.install(|| f(Execution::Parallel)),
                Err(_) => f(Execution::Parallel),
            },
            _ => f(Execution::Parallel),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_on_order() {
        let seq = Execution::Sequential.map_range(100, |i| i * i);
        let par = Execution::Parallel.map_range(100, |i| i * i);
        assert_eq!(seq, par);
        let items: Vec<u32> = (0..37).collect();
        assert_eq!(
            Execution::Sequential.map_slice(&items, |x| x + 1),
            Execution::Parallel.map_slice(&items, |x| x + 1)
        );
    }

    #[test]
    fn single_thread_pool_is_sequential() {
        let mode = Execution::with_threads(Some(1), |e| e);
        assert_eq!(mode, Execution::Sequential);
    }
}
