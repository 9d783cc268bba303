//! Baseline confidence estimators.
//!
//! Three families: sequence likelihood from token log-probabilities (raw or
//! rescaled with a fitted logistic map), self-reported confidence parsed from
//! a percentage generation, and self-reported confidence parsed from a
//! qualitative-scale generation. Unparseable self-reports stay absent; the
//! fraction that parsed is reported separately as a success rate.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Geometric-mean sequence likelihood: `exp(mean(token_logprobs))`.
///
/// Errors on an empty sequence or any positive or non-finite log-probability.
pub fn sequence_likelihood(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::Validation(
            "sequence likelihood requires at least one token log-probability".into(),
        ));
    }
    for &lp in token_logprobs {
        if !lp.is_finite() || lp > 0.0 {
            return Err(Error::Validation(format!(
                "token log-probability {lp} must be finite and nonpositive"
            )));
        }
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok(mean.exp())
}

/// Parameters of a logistic rescaling `sigma(a * p + b)` fitted to observed
/// correctness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler {
    pub a: f64,
    pub b: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl PlattScaler {
    /// Fits the scaler to probability/outcome pairs by full-batch gradient
    /// descent on the mean squared error, starting from the identity-like
    /// (a, b) = (1, 0) with learning rate 0.1 for 2000 iterations, keeping
    /// the iterate with the lowest error. The result never fits worse than
    /// the starting point. A single-class outcome vector is allowed but the
    /// fit may saturate, so it is logged as a warning.
    pub fn fit(probs: &[f64], outcomes: &[bool]) -> Result<PlattScaler> {
        if probs.len() != outcomes.len() || probs.is_empty() {
            return Err(Error::Training(format!(
                "scaler fit needs matching nonempty inputs, got {} probs and {} outcomes",
                probs.len(),
                outcomes.len()
            )));
        }
        for &p in probs {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::Training(format!(
                    "scaler input probability {p} outside [0,1]"
                )));
            }
        }
        if outcomes.iter().all(|&y| y) || outcomes.iter().all(|&y| !y) {
            log::warn!("fitting confidence rescaler on a single-class outcome vector");
        }
        const LR: f64 = 0.1;
        const ITERS: usize = 2000;
        let n = probs.len() as f64;
        let mse = |a: f64, b: f64| -> f64 {
            probs
                .iter()
                .zip(outcomes)
                .map(|(&p, &y)| {
                    let q = sigmoid(a * p + b);
                    let t = if y { 1.0 } else { 0.0 };
                    (q - t) * (q - t)
                })
                .sum::<f64>()
                / n
        };
        let (mut a, mut b) = (1.0f64, 0.0f64);
        let (mut best_a, mut best_b) = (a, b);
        let mut best_mse = mse(a, b);
        for _ in 0..ITERS {
            let (mut ga, mut gb) = (0.0f64, 0.0f64);
            for (&p, &y) in probs.iter().zip(outcomes) {
                let q = sigmoid(a * p + b);
                let t = if y { 1.0 } else { 0.0 };
                let common = 2.0 * (q - t) * q * (1.0 - q);
                ga += common * p;
                gb += common;
            }
            a -= LR * ga / n;
            b -= LR * gb / n;
            let err = mse(a, b);
            if err < best_mse {
                best_mse = err;
                best_a = a;
                best_b = b;
            }
        }
        Ok(PlattScaler {
            a: best_a,
            b: best_b,
        })
    }

    /// Applies the fitted rescaling to a probability.
    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.a * p + self.b)
    }

    /// Mean squared error of the rescaled probabilities against outcomes.
    pub fn mse(&self, probs: &[f64], outcomes: &[bool]) -> f64 {
        let n = probs.len().max(1) as f64;
        probs
            .iter()
            .zip(outcomes)
            .map(|(&p, &y)| {
                let q = self.apply(p);
                let t = if y { 1.0 } else { 0.0 };
                (q - t) * (q - t)
            })
            .sum::<f64>()
            / n
    }
}

static PERCENT_RE: OnceLock<Regex> = OnceLock::new();

/// Parses a self-reported percentage confidence from free text.
///
/// Takes the first number in the text, with or without a percent sign, and
/// maps it from [0, 100] to [0, 1]. Returns `None` when no number is present
/// or the first number falls outside [0, 100].
pub fn parse_verbalized_percent(text: &str) -> Option<f64> {
    let re = PERCENT_RE.get_or_init(|| {
        Regex::new(r"(\d+(?:\.\d+)?)\s*%?").expect("static pattern compiles")
    });
    let caps = re.captures(text)?;
    let value: f64 = caps[1].parse().ok()?;
    if (0.0..=100.0).contains(&value) {
        Some(value / 100.0)
    } else {
        None
    }
}

/// The qualitative confidence scale and its numeric mapping.
pub const QUALITATIVE_SCALE: [(&str, f64); 7] = [
    ("very low", 0.0),
    ("low", 0.3),
    ("somewhat low", 0.45),
    ("medium", 0.5),
    ("somewhat high", 0.65),
    ("high", 0.7),
    ("very high", 1.0),
];

/// Parses a self-reported qualitative confidence from free text.
///
/// Matches scale phrases case-insensitively on word boundaries, preferring
/// the longest phrase and breaking ties by earliest position, so "somewhat
/// high" does not parse as "high". Returns `None` when no phrase occurs.
pub fn parse_verbalized_qualitative(text: &str) -> Option<f64> {
    let lower = text.to_lowercase();
    let mut phrases: Vec<(&str, f64)> = QUALITATIVE_SCALE.to_vec();
    // Longest phrase first so containing phrases win over contained ones.
    phrases.sort_by_key(|(phrase, _)| std::cmp::Reverse(phrase.len()));
    let mut best: Option<(usize, usize, f64)> = None;
    for (phrase, value) in phrases {
        let mut start = 0;
        while let Some(pos) = lower[start..].find(phrase) {
            let at = start + pos;
            let end = at + phrase.len();
            let left_ok = at == 0
                || !lower[..at]
                    .chars()
                    .next_back()
                    .is_some_and(|c| c.is_alphanumeric());
            let right_ok = end == lower.len()
                || !lower[end..].chars().next().is_some_and(|c| c.is_alphanumeric());
            if left_ok && right_ok {
                let better = match best {
                    None => true,
                    Some((blen, bat, _)) => {
                        phrase.len() > blen || (phrase.len() == blen && at < bat)
                    }
                };
                if better {
                    best = Some((phrase.len(), at, value));
                }
            }
            start = at + 1;
        }
    }
    best.map(|(_, _, value)| value)
}

/// Fraction of parses that produced a value.
///
/// Errors on an empty list; a corpus with zero self-reports has no defined
/// success rate.
pub fn success_rate(parses: &[Option<f64>]) -> Result<f64> {
    if parses.is_empty() {
        return Err(Error::Validation(
            "success rate of an empty parse list is undefined".into(),
        ));
    }
    let hits = parses.iter().filter(|p| p.is_some()).count();
    Ok(hits as f64 / parses.len() as f64)
}
