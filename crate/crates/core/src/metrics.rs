//! Calibration and discrimination metrics.
//!
//! Covers expected calibration error over equal-width bins, a smoothed
//! variant using a reflected Gaussian kernel with a fixed-point bandwidth,
//! the Brier score, rank-based AUROC, bootstrap standard errors, and a
//! paired bootstrap significance test. All resampling draws from a
//! caller-supplied seed so results are reproducible.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{derive_seed_indexed, rng_from_seed};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

/// Default grid resolution for the smoothed calibration error; also the
/// reciprocal of the smallest admissible bandwidth.
pub const DEFAULT_SMECE_GRID: usize = 2048;

/// Default fixed-point tolerance for the smoothed calibration error.
pub const DEFAULT_SMECE_TOL: f64 = 1e-4;

/// Default resample count for bootstrap standard errors.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 100;

/// Default resample count for the paired bootstrap test.
pub const DEFAULT_PAIRED_RESAMPLES: usize = 1000;

/// Attempts per resample before giving up when a metric keeps being
/// undefined on redrawn samples.
const RESAMPLE_RETRY_BUDGET: usize = 100;

/// A labeled series of confidences with parallel correctness outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceSeries {
    pub label: String,
    pub confidences: Vec<f64>,
    pub correctness: Vec<bool>,
}

impl ConfidenceSeries {
    pub fn new(
        label: impl Into<String>,
        confidences: Vec<f64>,
        correctness: Vec<bool>,
    ) -> Result<ConfidenceSeries> {
        let series = ConfidenceSeries {
            label: label.into(),
            confidences,
            correctness,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        check_paired(&self.confidences, &self.correctness)
    }

    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }

    pub fn ece(&self) -> Result<f64> {
        ece(&self.confidences, &self.correctness)
    }

    pub fn smece(&self) -> Result<f64> {
        smece(&self.confidences, &self.correctness)
    }

    pub fn brier(&self) -> Result<f64> {
        brier(&self.confidences, &self.correctness)
    }

    pub fn auroc(&self) -> Result<f64> {
        auroc(&self.confidences, &self.correctness)
    }

    pub fn reliability_table(&self) -> Result<Vec<BinSummary>> {
        reliability_table(&self.confidences, &self.correctness, DEFAULT_BINS)
    }
}

fn check_paired(confidences: &[f64], outcomes: &[bool]) -> Result<()> {
    if confidences.len() != outcomes.len() {
        return Err(Error::Metric(format!(
            "confidence and outcome lengths differ: {} vs {}",
            confidences.len(),
            outcomes.len()
        )));
    }
    if confidences.is_empty() {
        return Err(Error::Metric("metric input is empty".into()));
    }
    for &c in confidences {
        if !(0.0..=1.0).contains(&c) || c.is_nan() {
            return Err(Error::Metric(format!("confidence {c} outside [0,1]")));
        }
    }
    Ok(())
}

fn bin_index(c: f64, bins: usize) -> usize {
    // Bin i covers [i/bins, (i+1)/bins); confidence 1.0 joins the top bin.
    // The multiply-and-floor guess can land one off when c sits exactly on a
    // rounded bin edge (0.3 * 10 rounds below 3), so compare against the
    // edges themselves.
    let b = bins as f64;
    let mut idx = ((c * b) as usize).min(bins - 1);
    if idx + 1 < bins && c >= (idx + 1) as f64 / b {
        idx += 1;
    } else if idx > 0 && c < idx as f64 / b {
        idx -= 1;
    }
    idx
}

/// Expected calibration error over ten equal-width bins.
///
/// Each nonempty bin contributes its size-weighted |accuracy - mean
/// confidence|.
pub fn ece(confidences: &[f64], outcomes: &[bool]) -> Result<f64> {
    ece_binned(confidences, outcomes, DEFAULT_BINS)
}

/// Expected calibration error with an explicit bin count.
pub fn ece_binned(confidences: &[f64], outcomes: &[bool], bins: usize) -> Result<f64> {
    check_paired(confidences, outcomes)?;
    if bins == 0 {
        return Err(Error::Metric("bin count must be positive".into()));
    }
    let n = confidences.len() as f64;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut hit_sum = vec![0.0f64; bins];
    for (&c, &y) in confidences.iter().zip(outcomes) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += if y { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let m = count[b] as f64;
        total += (m / n) * (hit_sum[b] / m - conf_sum[b] / m).abs();
    }
    Ok(total)
}

/// Gaussian kernel density at `x` from a unit mass at `p`, with the real
/// line folded into [0,1] by mirroring at both ends.
fn reflected_kernel(x: f64, p: f64, sigma: f64) -> f64 {
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut total = 0.0;
    // Mirror images at 2m + p and 2m - p for m in -3..=3 cover the tail mass
    // of a Gaussian with sigma <= 1 to well below 1e-10 on [0,1]. Folding
    // preserves total mass, so the kernel integrates to 1 for every p.
    for m in -3i32..=3 {
        let base = 2.0 * m as f64;
        for source in [base + p, base - p] {
            let z = (x - source) / sigma;
            total += norm * (-0.5 * z * z).exp();
        }
    }
    total
}

/// Smoothed calibration error at a fixed bandwidth: the integral over [0,1]
/// of the absolute kernel-smoothed residual (y - p), evaluated on a uniform
/// grid of `grid` midpoints.
fn smece_at_sigma(confidences: &[f64], outcomes: &[bool], sigma: f64, grid: usize) -> f64 {
    let n = confidences.len() as f64;
    let step = 1.0 / grid as f64;
    let mut total = 0.0;
    for g in 0..grid {
        let x = (g as f64 + 0.5) * step;
        let mut smoothed = 0.0;
        for (&c, &y) in confidences.iter().zip(outcomes) {
            let k = reflected_kernel(x, c, sigma);
            let target = if y { 1.0 } else { 0.0 };
            smoothed += k * (target - c);
        }
        total += (smoothed / n).abs() * step;
    }
    total
}

/// Smoothed expected calibration error with a self-consistent bandwidth.
///
/// Uses the default grid resolution (2048) and tolerance (1e-4).
pub fn smece(confidences: &[f64], outcomes: &[bool]) -> Result<f64> {
    smece_with(confidences, outcomes, DEFAULT_SMECE_GRID, DEFAULT_SMECE_TOL)
}

/// Smoothed expected calibration error with explicit grid and tolerance.
///
/// The bandwidth solves `sigma = error(sigma)` by bisection on
/// `[1/grid, 1]` until the residual drops below `tol`; the returned value is
/// the smoothed error at that bandwidth. When the error exceeds the
/// bandwidth across the whole interval the upper endpoint is used, and
/// symmetrically for the lower endpoint.
pub fn smece_with(
    confidences: &[f64],
    outcomes: &[bool],
    grid: usize,
    tol: f64,
) -> Result<f64> {
    check_paired(confidences, outcomes)?;
    if grid < 2 || !(tol > 0.0) {
        return Err(Error::Metric(format!(
            "smoothed calibration error needs grid >= 2 and tol > 0, got {grid} and {tol}"
        )));
    }
    let lo0 = 1.0 / grid as f64;
    let hi0 = 1.0;
    // f(sigma) = error(sigma) - sigma; the smoothed error shrinks (weakly)
    // as the bandwidth widens, so f crosses zero at most once.
    let f = |s: f64| smece_at_sigma(confidences, outcomes, s, grid) - s;
    let sigma = if f(lo0) <= 0.0 {
        lo0
    } else if f(hi0) >= 0.0 {
        hi0
    } else {
        let (mut lo, mut hi) = (lo0, hi0);
        let mut mid = 0.5 * (lo + hi);
        loop {
            let fm = f(mid);
            if fm.abs() <= tol || hi - lo < f64::EPSILON {
                break;
            }
            if fm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            mid = 0.5 * (lo + hi);
        }
        mid
    };
    Ok(smece_at_sigma(confidences, outcomes, sigma, grid))
}

/// Brier score: mean squared difference between confidence and outcome.
pub fn brier(confidences: &[f64], outcomes: &[bool]) -> Result<f64> {
    check_paired(confidences, outcomes)?;
    let n = confidences.len() as f64;
    let sum: f64 = confidences
        .iter()
        .zip(outcomes)
        .map(|(&c, &y)| {
            let t = if y { 1.0 } else { 0.0 };
            (c - t) * (c - t)
        })
        .sum();
    Ok(sum / n)
}

/// Area under the ROC curve via the rank-sum formulation.
///
/// Equals the probability that a uniformly chosen correct record receives a
/// higher confidence than a uniformly chosen incorrect one, with ties
/// counting one half. Errors when either class is absent.
pub fn auroc(confidences: &[f64], outcomes: &[bool]) -> Result<f64> {
    check_paired(confidences, outcomes)?;
    let n_pos = outcomes.iter().filter(|&&y| y).count();
    let n_neg = outcomes.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "AUROC needs at least one positive and one negative outcome".into(),
        ));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| {
        confidences[a]
            .partial_cmp(&confidences[b])
            .expect("confidences validated finite")
    });
    let mut rank = vec![0.0f64; confidences.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && confidences[order[j + 1]] == confidences[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tied block [i, j] shares the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            rank[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = outcomes
        .iter()
        .zip(&rank)
        .filter(|(&y, _)| y)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// A metric with its bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWithSe {
    pub value: f64,
    pub se: f64,
}

/// Bootstrap standard error of a paired metric.
///
/// Draws `resamples` with-replacement resamples, recomputes the metric on
/// each, and returns the point estimate on the full sample together with the
/// sample standard deviation over resamples. A resample on which the metric
/// is undefined (for example a single-class draw under AUROC) is redrawn,
/// up to a bounded retry budget per resample.
pub fn bootstrap_se<F>(
    confidences: &[f64],
    outcomes: &[bool],
    resamples: usize,
    seed: u64,
    metric: F,
) -> Result<MetricWithSe>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    check_paired(confidences, outcomes)?;
    if resamples < 2 {
        return Err(Error::Metric(
            "bootstrap needs at least two resamples".into(),
        ));
    }
    let value = metric(confidences, outcomes)?;
    let n = confidences.len();
    let mut estimates = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let mut rng = rng_from_seed(derive_seed_indexed(seed, "bootstrap", r as u64));
        let mut estimate = None;
        for _ in 0..RESAMPLE_RETRY_BUDGET {
            let mut conf = Vec::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.gen_range(0..n);
                conf.push(confidences[k]);
                out.push(outcomes[k]);
            }
            if let Ok(v) = metric(&conf, &out) {
                estimate = Some(v);
                break;
            }
        }
        match estimate {
            Some(v) => estimates.push(v),
            None => {
                return Err(Error::Metric(format!(
                    "bootstrap resample {r} stayed undefined after {RESAMPLE_RETRY_BUDGET} redraws"
                )))
            }
        }
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let var = estimates
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (m - 1.0);
    Ok(MetricWithSe {
        value,
        se: var.sqrt(),
    })
}

/// Paired bootstrap test that method A beats method B on a metric.
///
/// Both series must rate the same records, so they share one correctness
/// vector. Record indices are resampled jointly; each resample contributes 0
/// when A's metric beats B's (lower when `lower_is_better`, higher
/// otherwise), 1 when it loses, and 1/2 on an exact tie. The returned
/// one-sided p-value is the mean contribution; resamples on which either
/// metric is undefined are redrawn up to a bounded budget.
pub fn paired_bootstrap_pvalue<F>(
    conf_a: &[f64],
    conf_b: &[f64],
    outcomes: &[bool],
    resamples: usize,
    seed: u64,
    lower_is_better: bool,
    metric: F,
) -> Result<f64>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    check_paired(conf_a, outcomes)?;
    check_paired(conf_b, outcomes)?;
    if conf_a.len() != conf_b.len() {
        return Err(Error::Metric(format!(
            "paired series must align on the same records, got lengths {} and {}",
            conf_a.len(),
            conf_b.len()
        )));
    }
    if resamples == 0 {
        return Err(Error::Metric("paired bootstrap needs resamples >= 1".into()));
    }
    let n = outcomes.len();
    let mut total = 0.0f64;
    for r in 0..resamples {
        let mut rng = rng_from_seed(derive_seed_indexed(seed, "paired-bootstrap", r as u64));
        let mut contribution = None;
        for _ in 0..RESAMPLE_RETRY_BUDGET {
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.gen_range(0..n);
                a.push(conf_a[k]);
                b.push(conf_b[k]);
                out.push(outcomes[k]);
            }
            let (ma, mb) = match (metric(&a, &out), metric(&b, &out)) {
                (Ok(ma), Ok(mb)) => (ma, mb),
                _ => continue,
            };
            let delta = if lower_is_better { mb - ma } else { ma - mb };
            contribution = Some(if delta > 0.0 {
                0.0
            } else if delta < 0.0 {
                1.0
            } else {
                0.5
            });
            break;
        }
        match contribution {
            Some(c) => total += c,
            None => {
                return Err(Error::Metric(format!(
                    "paired resample {r} stayed undefined after {RESAMPLE_RETRY_BUDGET} redraws"
                )))
            }
        }
    }
    Ok(total / resamples as f64)
}

/// One bar of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub index: usize,
    /// Inclusive lower edge of the confidence bin.
    pub lo: f64,
    /// Exclusive upper edge (inclusive for the last bin).
    pub hi: f64,
    /// Records falling in the bin.
    pub count: usize,
    /// Empirical accuracy of the bin, 0 when empty.
    pub accuracy: f64,
    /// Mean confidence of the bin, 0 when empty.
    pub mean_confidence: f64,
    /// Share of all records falling in the bin; sums to 1 over bins.
    pub proportion: f64,
}

/// Bins confidences for a reliability diagram using the same scheme as
/// [`ece`]: equal-width bins, the last closed at 1.0.
pub fn reliability_table(
    confidences: &[f64],
    outcomes: &[bool],
    bins: usize,
) -> Result<Vec<BinSummary>> {
    check_paired(confidences, outcomes)?;
    if bins == 0 {
        return Err(Error::Metric("bin count must be positive".into()));
    }
    let n = confidences.len();
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut hit_sum = vec![0.0f64; bins];
    for (&c, &y) in confidences.iter().zip(outcomes) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += if y { 1.0 } else { 0.0 };
    }
    Ok((0..bins)
        .map(|b| {
            let m = count[b];
            BinSummary {
                index: b,
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: m,
                accuracy: if m == 0 { 0.0 } else { hit_sum[b] / m as f64 },
                mean_confidence: if m == 0 { 0.0 } else { conf_sum[b] / m as f64 },
                proportion: m as f64 / n as f64,
            }
        })
        .collect())
}
