//! Single-linkage hierarchy over the spanning tree, condensation by minimum
//! cluster size, and stability-based cluster extraction.
//!
//! Scale values are lambda = 1 / distance (infinite at distance zero), so
//! clusters are born at small lambda and lose points as lambda grows.

use std::collections::BTreeMap;

use super::mst::MstEdge;

/// Noise label for points belonging to no selected cluster.
pub const NOISE: i64 = -1;

/// One merge of the single-linkage dendrogram. Node ids 0..n are the points;
/// id n + k is the k-th merge.
#[derive(Debug, Clone)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
    /// Smallest point index in the subtree, used for canonical child order.
    min_point: usize,
}

#[derive(Debug)]
pub(crate) struct Dendrogram {
    n_points: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    fn size(&self, node: usize) -> usize {
        if node < self.n_points {
            1
        } else {
            self.merges[node - self.n_points].size
        }
    }

    fn min_point(&self, node: usize) -> usize {
        if node < self.n_points {
            node
        } else {
            self.merges[node - self.n_points].min_point
        }
    }

    fn leaves(&self, node: usize) -> Vec<usize> {
        let mut stack = vec![node];
        let mut out = Vec::new();
        while let Some(v) = stack.pop() {
            if v < self.n_points {
                out.push(v);
            } else {
                let m = &self.merges[v - self.n_points];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Attaches `child`'s root below `parent`'s root.
    fn union_into(&mut self, parent: usize, child: usize) {
        let rp = self.find(parent);
        let rc = self.find(child);
        self.parent[rc] = rp;
    }
}

/// Builds the single-linkage dendrogram from spanning-tree edges already
/// sorted by ascending weight. Children of each merge are ordered by their
/// smallest contained point index, which makes the tree canonical under
/// input row permutation.
pub(crate) fn single_linkage(edges: &[MstEdge], n_points: usize) -> Dendrogram {
    let mut dendro = Dendrogram {
        n_points,
        merges: Vec::with_capacity(edges.len()),
    };
    let mut uf = UnionFind::new(n_points);
    // Dendrogram node currently representing each union-find root.
    let mut comp_node: Vec<usize> = (0..n_points).collect();
    for (k, edge) in edges.iter().enumerate() {
        let ra = uf.find(edge.a);
        let rb = uf.find(edge.b);
        let (na, nb) = (comp_node[ra], comp_node[rb]);
        let (first, second) = if dendro.min_point(na) <= dendro.min_point(nb) {
            (na, nb)
        } else {
            (nb, na)
        };
        dendro.merges.push(Merge {
            left: first,
            right: second,
            distance: edge.weight,
            size: dendro.size(na) + dendro.size(nb),
            min_point: dendro.min_point(na).min(dendro.min_point(nb)),
        });
        uf.union_into(edge.a, edge.b);
        let root = uf.find(edge.a);
        comp_node[root] = n_points + k;
    }
    dendro
}

/// One row of the condensed tree: `child` is either a point (< n_points)
/// leaving `parent` at `lambda`, or a cluster born from `parent` at
/// `lambda` with `size` points.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CondensedRow {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug)]
pub(crate) struct CondensedTree {
    pub rows: Vec<CondensedRow>,
    pub n_points: usize,
    /// Cluster ids run from n_points (the root) to next_cluster exclusive.
    pub next_cluster: usize,
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// Condenses the dendrogram: walking from the root, a side of a split that
/// holds fewer than `min_cluster_size` points sheds its points at the
/// split's lambda, while a side at or above the threshold either continues
/// the parent cluster (when alone) or starts a new cluster (when both sides
/// qualify).
pub(crate) fn condense(dendro: &Dendrogram, min_cluster_size: usize) -> CondensedTree {
    let n = dendro.n_points;
    let root_node = n + dendro.merges.len() - 1;
    let mut tree = CondensedTree {
        rows: Vec::new(),
        n_points: n,
        next_cluster: n + 1,
    };
    // Stack entries: (dendrogram node, condensed cluster it belongs to).
    let mut stack = vec![(root_node, n)];
    while let Some((node, cid)) = stack.pop() {
        let merge = &dendro.merges[node - n];
        let lambda = lambda_of(merge.distance);
        let (lc, rc) = (dendro.size(merge.left), dendro.size(merge.right));
        if lc >= min_cluster_size && rc >= min_cluster_size {
            for child in [merge.left, merge.right] {
                let new_id = tree.next_cluster;
                tree.next_cluster += 1;
                tree.rows.push(CondensedRow {
                    parent: cid,
                    child: new_id,
                    lambda,
                    size: dendro.size(child),
                });
                stack.push((child, new_id));
            }
        } else if lc >= min_cluster_size {
            shed_points(dendro, merge.right, cid, lambda, &mut tree);
            stack.push((merge.left, cid));
        } else if rc >= min_cluster_size {
            shed_points(dendro, merge.left, cid, lambda, &mut tree);
            stack.push((merge.right, cid));
        } else {
            shed_points(dendro, merge.left, cid, lambda, &mut tree);
            shed_points(dendro, merge.right, cid, lambda, &mut tree);
        }
    }
    tree
}

fn shed_points(
    dendro: &Dendrogram,
    node: usize,
    cid: usize,
    lambda: f64,
    tree: &mut CondensedTree,
) {
    for point in dendro.leaves(node) {
        tree.rows.push(CondensedRow {
            parent: cid,
            child: point,
            lambda,
            size: 1,
        });
    }
}

/// Stability of each cluster: sum over member rows of (lambda - birth
/// lambda) weighted by row size, where a cluster's birth lambda is the
/// lambda at which it appeared as a child (0 for the root).
fn stabilities(tree: &CondensedTree) -> BTreeMap<usize, f64> {
    let mut birth: BTreeMap<usize, f64> = BTreeMap::new();
    birth.insert(tree.n_points, 0.0);
    for row in &tree.rows {
        if row.child >= tree.n_points {
            birth.insert(row.child, row.lambda);
        }
    }
    let mut stability: BTreeMap<usize, f64> =
        (tree.n_points..tree.next_cluster).map(|c| (c, 0.0)).collect();
    for row in &tree.rows {
        let b = birth[&row.parent];
        let gain = row.lambda - b;
        // Infinite birth and death cancel to zero mass, not NaN.
        let gain = if gain.is_nan() { 0.0 } else { gain };
        *stability.get_mut(&row.parent).expect("parent exists") += gain * row.size as f64;
    }
    stability
}

/// Excess-of-mass cluster selection. Processing clusters deepest-first, a
/// cluster keeps its own claim when its stability is at least the summed
/// stability of its child clusters, otherwise it passes the claim down. The
/// root is never selectable.
fn select_clusters(tree: &CondensedTree) -> Vec<usize> {
    let root = tree.n_points;
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for row in &tree.rows {
        if row.child >= tree.n_points {
            children.entry(row.parent).or_default().push(row.child);
        }
    }
    let mut stability = stabilities(tree);
    let mut selected: BTreeMap<usize, bool> =
        (root + 1..tree.next_cluster).map(|c| (c, true)).collect();
    for cluster in (root + 1..tree.next_cluster).rev() {
        let subtree: f64 = children
            .get(&cluster)
            .map(|cs| cs.iter().map(|c| stability[c]).sum())
            .unwrap_or(0.0);
        if subtree > stability[&cluster] {
            selected.insert(cluster, false);
            stability.insert(cluster, subtree);
        } else {
            // This cluster wins; nothing below it may also be selected.
            let mut stack = children.get(&cluster).cloned().unwrap_or_default();
            while let Some(c) = stack.pop() {
                selected.insert(c, false);
                if let Some(cs) = children.get(&c) {
                    stack.extend(cs.iter().copied());
                }
            }
        }
    }
    selected
        .into_iter()
        .filter_map(|(c, keep)| keep.then_some(c))
        .collect()
}

/// Labels every point with its selected cluster, or noise. Cluster labels
/// are renumbered 0.. in order of each cluster's smallest member index.
pub(crate) fn extract_labels(tree: &CondensedTree) -> Vec<i64> {
    let selected = select_clusters(tree);
    let is_selected = |c: usize| selected.binary_search(&c).is_ok();
    // Collapse every unselected cluster into its parent so a point's
    // representative is its nearest selected ancestor (or the root).
    let mut uf = UnionFind::new(tree.next_cluster);
    for row in &tree.rows {
        if row.child >= tree.n_points && !is_selected(row.child) {
            uf.union_into(row.parent, row.child);
        }
    }
    let mut labels = vec![NOISE; tree.n_points];
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for row in &tree.rows {
        if row.child < tree.n_points {
            let rep = uf.find(row.parent);
            if is_selected(rep) {
                members.entry(rep).or_default().push(row.child);
            }
        }
    }
    let mut order: Vec<(usize, Vec<usize>)> = members
        .into_iter()
        .map(|(c, mut pts)| {
            pts.sort_unstable();
            (c, pts)
        })
        .collect();
    order.sort_by_key(|(_, pts)| pts[0]);
    for (label, (_, pts)) in order.into_iter().enumerate() {
        for p in pts {
            labels[p] = label as i64;
        }
    }
    labels
}
