//! Task-parallel map with a sequential fallback.

use serde::{Deserialize, Serialize};

/// How independent Monte Carlo tasks are scheduled.
///
/// `Parallel` uses the current rayon pool. Without the `parallel` feature it
/// silently runs sequentially, so callers never need to cfg on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Evaluate `f(0..n)` and return the results in task order.
///
/// The output is identical for both execution modes as long as `f` is a pure
/// function of its index (which is what [`crate::rng::task_rng`] is for).
pub fn map_tasks<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => parallel_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
