//! Execution policy for the data-parallel inner loops.
//!
//! Best responses across initial atoms, value-function cells and exploitability
//! terms are independent. With the `parallel` feature (default) they run on the
//! rayon pool when [`Execution::Parallel`] is selected; otherwise, or when the
//! feature is disabled, they run sequentially. Results are collected in index
//! order either way, so outputs do not depend on the policy.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be distributed over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Configures the global rayon pool from `CMFG_THREADS`, if set.
pub fn init_thread_pool_from_env() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("CMFG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let f = |i: usize| (i as f64).sqrt();
        assert_eq!(map_indexed(Execution::Sequential, 100, f), map_indexed(Execution::Parallel, 100, f));
    }
}
