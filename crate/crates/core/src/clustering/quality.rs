//! Cluster-quality evaluation: do records in one cluster look more alike
//! than records from different clusters?
//!
//! Textual similarity is ROUGE-L between questions; semantic similarity is
//! the cosine between embedding rows. Both are sampled over intra-cluster
//! pairs (capped per cluster) and compared against pairs drawn from
//! different clusters.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClusterAssignment, EmbeddingMatrix, NOISE};
use crate::error::{Error, Result};
use crate::grading::rouge_l;
use crate::seed::{derive_seed, rng_from_seed};

/// Mean and spread of intra-cluster versus cross-cluster similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterQualityReport {
    pub textual_mean: f64,
    pub textual_std: f64,
    pub semantic_mean: f64,
    pub semantic_std: f64,
    pub random_textual_mean: f64,
    pub random_textual_std: f64,
    pub random_semantic_mean: f64,
    pub random_semantic_std: f64,
    /// Comparisons actually drawn for the textual series.
    pub n_textual: usize,
    /// Comparisons actually drawn for the semantic series.
    pub n_semantic: usize,
}

fn cosine(m: &EmbeddingMatrix, i: usize, j: usize) -> f64 {
    let (a, b) = (m.data.row(i), m.data.row(j));
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Samples intra-cluster index pairs, at most `per_cluster` from each
/// cluster in ascending label order, stopping once `target` pairs are
/// collected. Clusters are revisited in rounds until the target is met or
/// no cluster has pairs left.
fn intra_pairs(
    assignment: &ClusterAssignment,
    per_cluster: usize,
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut per_cluster_pairs: Vec<Vec<(usize, usize)>> = Vec::new();
    for members in assignment.clusters.values() {
        if members.len() < 2 {
            continue;
        }
        let mut all: Vec<(usize, usize)> = Vec::new();
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                all.push((i, j));
            }
        }
        all.shuffle(rng);
        per_cluster_pairs.push(all);
    }
    let mut picked = Vec::with_capacity(target);
    let mut round = 0usize;
    loop {
        let mut any = false;
        for pairs in &per_cluster_pairs {
            let lo = round * per_cluster;
            let hi = ((round + 1) * per_cluster).min(pairs.len());
            for &p in pairs.get(lo..hi).unwrap_or(&[]) {
                if picked.len() == target {
                    return picked;
                }
                picked.push(p);
                any = true;
            }
        }
        if !any {
            return picked;
        }
        round += 1;
    }
}

/// Samples `target` pairs of records from two different clusters.
fn cross_pairs(
    assignment: &ClusterAssignment,
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let clustered: Vec<usize> = assignment
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l != NOISE).then_some(i))
        .collect();
    let mut picked = Vec::with_capacity(target);
    while picked.len() < target {
        let i = clustered[rng.gen_range(0..clustered.len())];
        let j = clustered[rng.gen_range(0..clustered.len())];
        if assignment.labels[i] != assignment.labels[j] {
            picked.push((i, j));
        }
    }
    picked
}

/// Compares intra-cluster similarity against cross-cluster similarity.
///
/// Draws up to `per_cluster` question pairs from each cluster until
/// `n_rouge` textual and `n_cos` semantic comparisons are collected (fewer
/// when the clustering is small), plus equally many cross-cluster pairs for
/// the random baselines. Requires at least two clusters with two or more
/// members.
pub fn evaluate_cluster_quality(
    assignment: &ClusterAssignment,
    questions: &[String],
    m: &EmbeddingMatrix,
    seed: u64,
    n_rouge: usize,
    n_cos: usize,
    per_cluster: usize,
) -> Result<ClusterQualityReport> {
    if questions.len() != assignment.labels.len() || m.n() != assignment.labels.len() {
        return Err(Error::Validation(format!(
            "quality evaluation needs aligned inputs, got {} labels, {} questions, {} rows",
            assignment.labels.len(),
            questions.len(),
            m.n()
        )));
    }
    if n_rouge == 0 || n_cos == 0 || per_cluster == 0 {
        return Err(Error::Validation(
            "comparison counts and the per-cluster cap must be positive".into(),
        ));
    }
    let pairable = assignment
        .clusters
        .values()
        .filter(|mem| mem.len() >= 2)
        .count();
    if pairable < 2 {
        return Err(Error::Validation(format!(
            "quality evaluation needs two clusters with at least two members, found {pairable}"
        )));
    }

    let mut rng = rng_from_seed(derive_seed(seed, "quality/intra-textual"));
    let textual_pairs = intra_pairs(assignment, per_cluster, n_rouge, &mut rng);
    let mut rng = rng_from_seed(derive_seed(seed, "quality/intra-semantic"));
    let semantic_pairs = intra_pairs(assignment, per_cluster, n_cos, &mut rng);
    let mut rng = rng_from_seed(derive_seed(seed, "quality/random-textual"));
    let random_textual_pairs = cross_pairs(assignment, textual_pairs.len(), &mut rng);
    let mut rng = rng_from_seed(derive_seed(seed, "quality/random-semantic"));
    let random_semantic_pairs = cross_pairs(assignment, semantic_pairs.len(), &mut rng);

    let rouge_of = |pairs: &[(usize, usize)]| -> Vec<f64> {
        pairs
            .iter()
            .map(|&(i, j)| rouge_l(&questions[i], &questions[j]))
            .collect()
    };
    let cosine_of = |pairs: &[(usize, usize)]| -> Vec<f64> {
        pairs.iter().map(|&(i, j)| cosine(m, i, j)).collect()
    };

    let (textual_mean, textual_std) = mean_std(&rouge_of(&textual_pairs));
    let (semantic_mean, semantic_std) = mean_std(&cosine_of(&semantic_pairs));
    let (random_textual_mean, random_textual_std) = mean_std(&rouge_of(&random_textual_pairs));
    let (random_semantic_mean, random_semantic_std) =
        mean_std(&cosine_of(&random_semantic_pairs));
    Ok(ClusterQualityReport {
        textual_mean,
        textual_std,
        semantic_mean,
        semantic_std,
        random_textual_mean,
        random_textual_std,
        random_semantic_mean,
        random_semantic_std,
        n_textual: textual_pairs.len(),
        n_semantic: semantic_pairs.len(),
    })
}
