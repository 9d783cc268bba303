//! Core distances, mutual reachability, and the minimum spanning tree that
//! seeds the cluster hierarchy.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::exec::map_range;

/// One edge of the spanning tree over mutual reachability distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

fn euclidean(data: &ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    let (ri, rj) = (data.row(i), data.row(j));
    ri.iter()
        .zip(rj.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from each point to its `min_samples`-th nearest neighbor, self
/// excluded.
pub(crate) fn core_distances(
    data: &ArrayView2<'_, f64>,
    min_samples: usize,
    parallel: bool,
) -> Result<Vec<f64>> {
    let n = data.nrows();
    if min_samples < 1 || min_samples >= n {
        return Err(Error::Validation(format!(
            "min_samples must satisfy 1 <= min_samples < {n}, got {min_samples}"
        )));
    }
    Ok(map_range(n, parallel, |i| {
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| euclidean(data, i, j))
            .collect();
        // Only the min_samples-th smallest matters; a partial sort suffices.
        dists.select_nth_unstable_by(min_samples - 1, |a, b| {
            a.partial_cmp(b).expect("finite distances")
        });
        dists[min_samples - 1]
    }))
}

/// Mutual reachability distance: the direct distance floored by both core
/// distances.
fn mutual_reachability(
    data: &ArrayView2<'_, f64>,
    core: &[f64],
    i: usize,
    j: usize,
) -> f64 {
    euclidean(data, i, j).max(core[i]).max(core[j])
}

/// Builds a minimum spanning tree over the mutual reachability graph with
/// Prim's algorithm, computing distances on the fly so memory stays linear
/// in the point count. Ties in the frontier choose the lowest point index.
/// Edges are returned in ascending weight order with `a < b` per edge.
pub(crate) fn mutual_reachability_mst_impl(
    data: &ArrayView2<'_, f64>,
    min_samples: usize,
    parallel: bool,
) -> Result<Vec<MstEdge>> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::Validation(format!(
            "a spanning tree needs at least 2 points, got {n}"
        )));
    }
    for value in data.iter() {
        if !value.is_finite() {
            return Err(Error::Validation(
                "embedding matrix contains a non-finite value".into(),
            ));
        }
    }
    let core = core_distances(data, min_samples, parallel)?;

    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 0..n - 1 {
        // Relax every frontier distance against the newly added point. The
        // update per index is independent, so the parallel map is exact.
        let updates = map_range(n, parallel, |j| {
            if in_tree[j] {
                f64::INFINITY
            } else {
                mutual_reachability(data, &core, current, j)
            }
        });
        for (j, &d) in updates.iter().enumerate() {
            if d < best_dist[j] {
                best_dist[j] = d;
                best_from[j] = current;
            }
        }
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best_dist[j] < next_dist {
                next_dist = best_dist[j];
                next = j;
            }
        }
        let (a, b) = if best_from[next] < next {
            (best_from[next], next)
        } else {
            (next, best_from[next])
        };
        edges.push(MstEdge {
            a,
            b,
            weight: next_dist,
        });
        in_tree[next] = true;
        current = next;
    }
    edges.sort_by(|x, y| {
        x.weight
            .partial_cmp(&y.weight)
            .expect("finite weights")
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    Ok(edges)
}
