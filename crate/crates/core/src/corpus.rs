//! Record schema, JSONL corpus IO, split assignment, and in-context
//! demonstration sampling.
//!
//! Every pipeline stage reads and writes the same one-object-per-line JSONL
//! schema, filling in additional fields as it goes; optional fields that are
//! absent stay absent on write.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Which split a record belongs to after split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One question/answer instance carried through the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalized_percent_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalized_qual_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl CalibrationRecord {
    /// A minimal record with only the ingestion-time fields set.
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        gold_answers: Vec<String>,
    ) -> CalibrationRecord {
        CalibrationRecord {
            id: id.into(),
            question: question.into(),
            context: None,
            gold_answers,
            model_answer: None,
            cot_answer: None,
            verbalized_percent_raw: None,
            verbalized_qual_raw: None,
            token_logprobs: None,
            embedding: None,
            split: None,
            correct: None,
            cluster_id: None,
            target: None,
        }
    }
}

/// Validates per-record and cross-record invariants: nonempty gold answers,
/// targets in [0,1], unique ids, and one embedding dimension corpus-wide.
pub fn validate_records(records: &[CalibrationRecord]) -> Result<()> {
    let mut seen_ids: HashSet<&str> = HashSet::with_capacity(records.len());
    let mut dim: Option<usize> = None;
    for record in records {
        if record.gold_answers.is_empty() {
            return Err(Error::Validation(format!(
                "record {} has no gold answers",
                record.id
            )));
        }
        if !seen_ids.insert(&record.id) {
            return Err(Error::Validation(format!("duplicate record id {}", record.id)));
        }
        if let Some(t) = record.target {
            if !(0.0..=1.0).contains(&t) || t.is_nan() {
                return Err(Error::Validation(format!(
                    "record {} target {t} outside [0,1]",
                    record.id
                )));
            }
        }
        if let Some(embedding) = &record.embedding {
            match dim {
                None => dim = Some(embedding.len()),
                Some(d) if d != embedding.len() => {
                    return Err(Error::Dimension(format!(
                        "record {} embedding has length {}, corpus uses {d}",
                        record.id,
                        embedding.len()
                    )))
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

/// Loads and validates a JSONL corpus, preserving file order.
///
/// Parse failures name the 1-based line; blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CalibrationRecord>> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CalibrationRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    validate_records(&records)?;
    Ok(records)
}

/// Writes a corpus as JSONL in the order given.
pub fn save_corpus(path: impl AsRef<Path>, records: &[CalibrationRecord]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// How many records go to each split, and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// The reference corpus proportions: 12000/1500/1500.
    pub fn reference(seed: u64) -> SplitSpec {
        SplitSpec {
            train_size: 12000,
            validation_size: 1500,
            test_size: 1500,
            seed,
        }
    }

    /// Scales the 80/10/10 reference proportions to a corpus of `n` records:
    /// train and validation round to nearest, test takes the remainder.
    pub fn proportional(n: usize, seed: u64) -> SplitSpec {
        let train = (0.8 * n as f64).round() as usize;
        let validation = (0.1 * n as f64).round() as usize;
        SplitSpec {
            train_size: train.min(n),
            validation_size: validation.min(n - train.min(n)),
            test_size: n - train.min(n) - validation.min(n - train.min(n)),
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.train_size + self.validation_size + self.test_size
    }

    pub fn validate(&self, corpus_size: usize) -> Result<()> {
        if self.train_size == 0 || self.validation_size == 0 || self.test_size == 0 {
            return Err(Error::Validation(format!(
                "split sizes must be positive, got {}/{}/{}",
                self.train_size, self.validation_size, self.test_size
            )));
        }
        if self.total() > corpus_size {
            return Err(Error::Validation(format!(
                "split sizes total {} but the corpus has only {corpus_size} records",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Assigns splits in place: a seed-deterministic shuffle picks the order,
/// then the first `train_size` records become train, the next
/// `validation_size` validation, the next `test_size` test. Records beyond
/// the requested total (if any) get their split cleared. Record order in
/// the returned vector matches the input.
pub fn split_corpus(
    mut records: Vec<CalibrationRecord>,
    spec: &SplitSpec,
) -> Result<Vec<CalibrationRecord>> {
    spec.validate(records.len())?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = rng_from_seed(derive_seed(spec.seed, "split"));
    order.shuffle(&mut rng);
    for record in &mut records {
        record.split = None;
    }
    for (pos, &idx) in order.iter().enumerate() {
        records[idx].split = if pos < spec.train_size {
            Some(Split::Train)
        } else if pos < spec.train_size + spec.validation_size {
            Some(Split::Validation)
        } else if pos < spec.total() {
            Some(Split::Test)
        } else {
            None
        };
    }
    Ok(records)
}

/// Samples `k` distinct in-context demonstrations from the train records,
/// never including the record identified by `exclude_id`. The draw is
/// deterministic per (seed, exclude_id), so different instances see
/// different demonstrations while reruns reproduce them.
pub fn sample_icl<'a>(
    train_records: &'a [CalibrationRecord],
    k: usize,
    seed: u64,
    exclude_id: &str,
) -> Result<Vec<&'a CalibrationRecord>> {
    let pool: Vec<&CalibrationRecord> = train_records
        .iter()
        .filter(|r| r.id != exclude_id)
        .collect();
    if k > pool.len() {
        return Err(Error::Validation(format!(
            "cannot sample {k} demonstrations from {} eligible train records",
            pool.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(derive_seed(seed, &format!("icl/{exclude_id}")));
    let mut chosen: Vec<&CalibrationRecord> =
        pool.choose_multiple(&mut rng, k).copied().collect();
    // choose_multiple gives no order guarantee worth relying on; fix the
    // demonstration order by position in the train list.
    chosen.sort_by_key(|r| {
        train_records
            .iter()
            .position(|t| t.id == r.id)
            .expect("chosen from this list")
    });
    Ok(chosen)
}
