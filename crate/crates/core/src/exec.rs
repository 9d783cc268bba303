//! Internal switch between data-parallel and sequential execution.
//!
//! Every parallel site in the crate maps an index range through a pure
//! function and collects in index order, so results are bit-identical
//! whether the work runs on one thread or many. The `parallel` flag selects
//! rayon when the feature is compiled in; sequential callers and builds
//! without the feature take the plain loop.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn map_range<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(&f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}
