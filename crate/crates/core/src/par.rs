//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output so results do not depend
//! on scheduling. With the `parallel` feature disabled, [`Exec::Parallel`]
//! silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for a data-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Maps `f` over `0..n`, collecting results in index order.
    pub fn map_range<O, F>(self, n: usize, f: F) -> Vec<O>
    where
        O: Send,
        F: Fn(usize) -> O + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, collecting results in input order.
    pub fn map<I, O, F>(self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Fallible [`Exec::map_range`]; returns the first error in index order.
    pub fn try_map_range<O, E, F>(self, n: usize, f: F) -> Result<Vec<O>, E>
    where
        O: Send,
        E: Send,
        F: Fn(usize) -> Result<O, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }
}

/// Configures the global worker pool. A count of zero keeps rayon's default
/// (one worker per available core). No-op without the `parallel` feature.
pub fn init_workers(count: usize) {
    #[cfg(feature = "parallel")]
    if count > 0 {
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(count).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = count;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let a = Exec::Parallel.map_range(1000, |i| i * i);
        let b = Exec::Sequential.map_range(1000, |i| i * i);
        assert_eq!(a, b);
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>, usize> =
            Exec::Parallel.try_map_range(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(29));
    }
}
