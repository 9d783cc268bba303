//! Embedding normalization, density-based clustering, and cluster-accuracy
//! calibration targets.
//!
//! The clusterer is hierarchical density-based: it builds a minimum spanning
//! tree over mutual reachability distances, condenses the single-linkage
//! hierarchy by minimum cluster size, and keeps the clusters with maximal
//! stability. Points outside every kept cluster carry the noise label -1.

mod hierarchy;
mod mst;
mod quality;

pub use hierarchy::NOISE;
pub use mst::MstEdge;
pub use quality::{evaluate_cluster_quality, ClusterQualityReport};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Which normalization has been applied to an embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    /// Each feature column has mean 0 and population standard deviation 1.
    PerFeatureZ,
    /// Each row has unit Euclidean norm.
    L2Row,
}

/// An N x D matrix of embeddings plus its normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub data: Array2<f64>,
    pub normalized: Normalization,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>, normalized: Normalization) -> Result<EmbeddingMatrix> {
        if data.ncols() == 0 {
            return Err(Error::Dimension(
                "embedding matrix needs at least one feature column".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "embedding matrix contains a non-finite value".into(),
            ));
        }
        Ok(EmbeddingMatrix { data, normalized })
    }

    /// Builds a raw matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<EmbeddingMatrix> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Dimension("no embedding rows given".into()));
        }
        let d = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Dimension(format!(
                    "embedding row {i} has length {}, row 0 has {d}",
                    row.len()
                )));
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((n, d), flat).expect("shape matches by construction");
        EmbeddingMatrix::new(data, Normalization::Raw)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Normalizes a raw embedding matrix.
///
/// Per-feature z-scoring gives every column mean 0 and population standard
/// deviation 1, mapping constant columns to zeros. Row normalization scales
/// each row to unit Euclidean norm, leaving zero rows unchanged (with a
/// warning). Normalizing an already-normalized matrix is an error.
pub fn normalize_embeddings(m: &EmbeddingMatrix, mode: Normalization) -> Result<EmbeddingMatrix> {
    if m.normalized != Normalization::Raw {
        return Err(Error::Validation(format!(
            "matrix is already normalized ({:?})",
            m.normalized
        )));
    }
    if mode == Normalization::Raw {
        return Err(Error::Validation(
            "choose per_feature_z or l2_row as the normalization target".into(),
        ));
    }
    let mut data = m.data.clone();
    match mode {
        Normalization::PerFeatureZ => {
            let n = data.nrows() as f64;
            for mut col in data.columns_mut() {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let std = var.sqrt();
                if std == 0.0 {
                    col.fill(0.0);
                } else {
                    col.mapv_inplace(|v| (v - mean) / std);
                }
            }
        }
        Normalization::L2Row => {
            let mut zero_rows = 0usize;
            for mut row in data.rows_mut() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    zero_rows += 1;
                } else {
                    row.mapv_inplace(|v| v / norm);
                }
            }
            if zero_rows > 0 {
                log::warn!("{zero_rows} zero embedding rows left unnormalized");
            }
        }
        Normalization::Raw => unreachable!("rejected above"),
    }
    EmbeddingMatrix::new(data, mode)
}

/// Clustering parameters recorded alongside an assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub metric: String,
}

/// Per-record cluster labels plus membership lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// One label per record; -1 marks noise.
    pub labels: Vec<i64>,
    /// Members of each non-noise cluster, ascending by record index.
    pub clusters: BTreeMap<i64, Vec<usize>>,
    pub params: ClusterParams,
}

impl ClusterAssignment {
    /// Rebuilds an assignment from per-record labels, deriving the
    /// membership lists.
    pub fn from_labels(labels: Vec<i64>, params: ClusterParams) -> ClusterAssignment {
        let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &label) in labels.iter().enumerate() {
            if label != NOISE {
                clusters.entry(label).or_default().push(i);
            }
        }
        ClusterAssignment {
            labels,
            clusters,
            params,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Spanning tree over mutual reachability distances (parallel distance
/// computation when compiled in).
pub fn mutual_reachability_mst(m: &EmbeddingMatrix, min_samples: usize) -> Result<Vec<MstEdge>> {
    mst::mutual_reachability_mst_impl(&m.data.view(), min_samples, true)
}

/// Sequential twin of [`mutual_reachability_mst`]; results are identical.
pub fn mutual_reachability_mst_seq(
    m: &EmbeddingMatrix,
    min_samples: usize,
) -> Result<Vec<MstEdge>> {
    mst::mutual_reachability_mst_impl(&m.data.view(), min_samples, false)
}

fn cluster_questions_impl(
    m: &EmbeddingMatrix,
    min_cluster_size: usize,
    min_samples: usize,
    parallel: bool,
) -> Result<ClusterAssignment> {
    if m.normalized == Normalization::Raw {
        return Err(Error::Validation(
            "normalize the embedding matrix before clustering".into(),
        ));
    }
    if min_cluster_size < 2 {
        return Err(Error::Validation(format!(
            "min_cluster_size must be at least 2, got {min_cluster_size}"
        )));
    }
    let params = ClusterParams {
        min_cluster_size,
        min_samples,
        metric: "euclidean".into(),
    };
    let n = m.n();
    if n < min_cluster_size {
        // Too few points to form any cluster; everything is noise.
        return Ok(ClusterAssignment::from_labels(vec![NOISE; n], params));
    }
    let edges = mst::mutual_reachability_mst_impl(&m.data.view(), min_samples, parallel)?;
    let dendro = hierarchy::single_linkage(&edges, n);
    let tree = hierarchy::condense(&dendro, min_cluster_size);
    let labels = hierarchy::extract_labels(&tree);
    Ok(ClusterAssignment::from_labels(labels, params))
}

/// Clusters normalized embeddings (parallel distance computation when
/// compiled in). Fewer points than `min_cluster_size` yields all noise.
pub fn cluster_questions(
    m: &EmbeddingMatrix,
    min_cluster_size: usize,
    min_samples: usize,
) -> Result<ClusterAssignment> {
    cluster_questions_impl(m, min_cluster_size, min_samples, true)
}

/// Sequential twin of [`cluster_questions`]; results are identical.
pub fn cluster_questions_seq(
    m: &EmbeddingMatrix,
    min_cluster_size: usize,
    min_samples: usize,
) -> Result<ClusterAssignment> {
    cluster_questions_impl(m, min_cluster_size, min_samples, false)
}

/// Gives every record the mean correctness of its cluster; a noise record
/// stands alone and receives its own correctness.
pub fn assign_calibration_targets(
    assignment: &ClusterAssignment,
    correctness: &[Option<bool>],
) -> Result<Vec<f64>> {
    if correctness.len() != assignment.labels.len() {
        return Err(Error::Validation(format!(
            "correctness length {} does not match label length {}",
            correctness.len(),
            assignment.labels.len()
        )));
    }
    let known: Vec<f64> = correctness
        .iter()
        .enumerate()
        .map(|(i, c)| match c {
            Some(true) => Ok(1.0),
            Some(false) => Ok(0.0),
            None => Err(Error::MissingField {
                field: "correct",
                record_id: i.to_string(),
                context: "target assignment needs graded records".into(),
            }),
        })
        .collect::<Result<_>>()?;
    let mut targets = known.clone();
    for members in assignment.clusters.values() {
        let accuracy = members.iter().map(|&i| known[i]).sum::<f64>() / members.len() as f64;
        for &i in members {
            targets[i] = accuracy;
        }
    }
    Ok(targets)
}
