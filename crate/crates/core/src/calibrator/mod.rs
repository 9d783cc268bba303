//! Auxiliary confidence predictor: turns a record into a feature vector,
//! trains a small network against cluster-accuracy or binary-correctness
//! targets, and selects models by validation loss. Hyperparameters come from
//! a seeded random search.

mod mlp;
mod optim;

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{parse_verbalized_percent, parse_verbalized_qualitative};
use crate::corpus::CalibrationRecord;
use crate::error::{Error, Result};
use crate::exec;
use crate::seed::{derive_seed, derive_seed_indexed, rng_from_seed};

pub use mlp::{Mlp, MlpShape};
pub use optim::{
    adamw_step, clip_global_norm, cosine_lr, AdamWState, DEFAULT_BETA1, DEFAULT_BETA2,
    DEFAULT_EPSILON,
};

use mlp::logistic;

/// Token budget applied to each text before it reaches the embedder.
pub const CONTEXT_TOKEN_BUDGET: usize = 512;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Maps text to a fixed-dimension vector. Implementations must be
/// deterministic for the same input.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Which verbalized confidence field feeds the parsed-confidence scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerbalizedSource {
    None,
    Percent,
    Qualitative,
}

/// Selects which record fields become model inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub use_question_embedding: bool,
    pub use_answer_embedding: bool,
    pub use_cot_answer: bool,
    pub use_verbalized: VerbalizedSource,
    pub use_answer_token_count: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            use_question_embedding: true,
            use_answer_embedding: true,
            use_cot_answer: false,
            use_verbalized: VerbalizedSource::None,
            use_answer_token_count: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let any = self.use_question_embedding
            || self.use_answer_embedding
            || self.use_cot_answer
            || self.use_answer_token_count
            || self.use_verbalized != VerbalizedSource::None;
        if !any {
            return Err(Error::Validation(
                "at least one feature source must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Feature-vector length for `cfg` given the embedder dimension.
pub fn feature_dim(cfg: &FeatureConfig, embedding_dim: usize) -> Result<usize> {
    cfg.validate()?;
    let blocks = usize::from(cfg.use_question_embedding)
        + usize::from(cfg.use_answer_embedding)
        + usize::from(cfg.use_cot_answer);
    Ok(blocks * embedding_dim
        + usize::from(cfg.use_answer_token_count)
        + usize::from(cfg.use_verbalized != VerbalizedSource::None))
}

fn truncate_text(text: &str, budget: usize) -> Cow<'_, str> {
    let mut tokens = text.split_whitespace();
    let kept: Vec<&str> = tokens.by_ref().take(budget).collect();
    if tokens.next().is_none() {
        Cow::Borrowed(text)
    } else {
        Cow::Owned(kept.join(" "))
    }
}

fn missing(field: &'static str, record: &CalibrationRecord) -> Error {
    Error::MissingField {
        field,
        record_id: record.id.clone(),
        context: "feature extraction".into(),
    }
}

/// Builds the model input for one record: enabled embedding blocks in the
/// fixed order question, answer, chain-of-thought answer, then scalar
/// features. The parsed verbalized confidence comes last and is -1 when the
/// raw text does not parse.
pub fn featurize_record(
    record: &CalibrationRecord,
    cfg: &FeatureConfig,
    embedder: &dyn Embedder,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let embed = |text: &str| -> Result<Vec<f64>> {
        let v = embedder.embed(&truncate_text(text, CONTEXT_TOKEN_BUDGET))?;
        if v.len() != embedder.dim() {
            return Err(Error::Dimension(format!(
                "embedder returned {} values but reports dimension {}",
                v.len(),
                embedder.dim()
            )));
        }
        Ok(v)
    };
    let mut out = Vec::new();
    if cfg.use_question_embedding {
        out.extend(embed(&record.question)?);
    }
    if cfg.use_answer_embedding {
        let answer = record
            .model_answer
            .as_deref()
            .ok_or_else(|| missing("model_answer", record))?;
        out.extend(embed(answer)?);
    }
    if cfg.use_cot_answer {
        let cot = record
            .cot_answer
            .as_deref()
            .ok_or_else(|| missing("cot_answer", record))?;
        out.extend(embed(cot)?);
    }
    if cfg.use_answer_token_count {
        let answer = record
            .model_answer
            .as_deref()
            .ok_or_else(|| missing("model_answer", record))?;
        out.push(answer.split_whitespace().count() as f64);
    }
    match cfg.use_verbalized {
        VerbalizedSource::None => {}
        VerbalizedSource::Percent => {
            let raw = record
                .verbalized_percent_raw
                .as_deref()
                .ok_or_else(|| missing("verbalized_percent_raw", record))?;
            out.push(parse_verbalized_percent(raw).unwrap_or(-1.0));
        }
        VerbalizedSource::Qualitative => {
            let raw = record
                .verbalized_qual_raw
                .as_deref()
                .ok_or_else(|| missing("verbalized_qual_raw", record))?;
            out.push(parse_verbalized_qualitative(raw).unwrap_or(-1.0));
        }
    }
    Ok(out)
}

/// What the calibrator regresses against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Mean squared error against cluster-accuracy targets.
    Clustering,
    /// Class-weighted cross-entropy against per-record correctness.
    Binary,
}

/// Featurized training data with aligned targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} targets",
                features.len(),
                targets.len()
            )));
        }
        if let Some(first) = features.first() {
            if first.is_empty() {
                return Err(Error::Validation("feature rows must be nonempty".into()));
            }
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Dimension(
                    "feature rows have inconsistent lengths".into(),
                ));
            }
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Validation(
                "targets must lie in the unit interval".into(),
            ));
        }
        Ok(Self { features, targets })
    }

    /// Featurizes records and pulls the target required by `mode`: the
    /// cluster-accuracy target, or correctness as 0/1.
    pub fn from_records(
        records: &[CalibrationRecord],
        cfg: &FeatureConfig,
        embedder: &dyn Embedder,
        mode: TargetMode,
    ) -> Result<Self> {
        let mut features = Vec::with_capacity(records.len());
        let mut targets = Vec::with_capacity(records.len());
        for record in records {
            features.push(featurize_record(record, cfg, embedder)?);
            let target = match mode {
                TargetMode::Clustering => record.target.ok_or_else(|| Error::MissingField {
                    field: "target",
                    record_id: record.id.clone(),
                    context: "cluster-accuracy training".into(),
                })?,
                TargetMode::Binary => {
                    let correct = record.correct.ok_or_else(|| Error::MissingField {
                        field: "correct",
                        record_id: record.id.clone(),
                        context: "binary-correctness training".into(),
                    })?;
                    f64::from(u8::from(correct))
                }
            };
            targets.push(target);
        }
        Self::new(features, targets)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// Per-class loss weights for binary training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub incorrect: f64,
    pub correct: f64,
}

/// Balanced weights N / (2 * N_c) over 0/1 targets.
pub fn balanced_class_weights(targets: &[f64]) -> Result<ClassWeights> {
    if targets.is_empty() {
        return Err(Error::Training(
            "cannot balance class weights over an empty target list".into(),
        ));
    }
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Training(
            "class weights need binary targets, found a fractional value".into(),
        ));
    }
    let n = targets.len() as f64;
    let n_correct = targets.iter().filter(|&&t| t == 1.0).count() as f64;
    let n_incorrect = n - n_correct;
    if n_correct == 0.0 || n_incorrect == 0.0 {
        return Err(Error::Training(format!(
            "cannot balance class weights with {n_incorrect} incorrect and {n_correct} correct"
        )));
    }
    Ok(ClassWeights {
        incorrect: n / (2.0 * n_incorrect),
        correct: n / (2.0 * n_correct),
    })
}

/// Batch loss and its gradient with respect to the output logits.
///
/// Clustering mode is mean squared error against targets in [0,1]; binary
/// mode is cross-entropy with optional class weights and requires exact 0/1
/// targets. Predictions must lie strictly inside the unit interval.
pub fn compute_loss(
    preds: &[f64],
    targets: &[f64],
    mode: TargetMode,
    class_weights: Option<&ClassWeights>,
) -> Result<(f64, Vec<f64>)> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Validation(format!(
            "loss needs a nonempty aligned batch, got {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Validation(
            "predictions must lie strictly inside the unit interval".into(),
        ));
    }
    if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Validation(
            "targets must lie in the unit interval".into(),
        ));
    }
    let b = preds.len() as f64;
    let mut grad = vec![0.0; preds.len()];
    let mut loss = 0.0;
    match mode {
        TargetMode::Clustering => {
            for (i, (&p, &t)) in preds.iter().zip(targets).enumerate() {
                let r = p - t;
                loss += r * r;
                grad[i] = 2.0 * r * p * (1.0 - p) / b;
            }
        }
        TargetMode::Binary => {
            if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(Error::Training(
                    "binary mode requires targets of exactly 0 or 1".into(),
                ));
            }
            let unit = ClassWeights { incorrect: 1.0, correct: 1.0 };
            let w = class_weights.unwrap_or(&unit);
            for (i, (&p, &t)) in preds.iter().zip(targets).enumerate() {
                let wi = if t == 1.0 { w.correct } else { w.incorrect };
                loss += wi * if t == 1.0 { -p.ln() } else { -(1.0 - p).ln() };
                grad[i] = wi * (p - t) / b;
            }
        }
    }
    Ok((loss / b, grad))
}

/// Optimization settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            batch_size: 32,
            max_steps: 1000,
            grad_clip_norm: 10.0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            eval_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval cadence must be at least 1".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Trained predictor plus the context needed to reuse it: feature layout,
/// target mode, and the validation result that selected it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratorModel {
    pub version: u32,
    pub feature_config: FeatureConfig,
    pub target_mode: TargetMode,
    pub mlp: Mlp,
    pub best_val_loss: f64,
    pub best_step: u64,
}

impl CalibratorModel {
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        self.mlp.forward(features)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}, expected {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        self.feature_config.validate()?;
        self.mlp.validate()?;
        if !self.best_val_loss.is_finite() {
            return Err(Error::Validation(
                "checkpoint validation loss is not finite".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }
}

/// Batch loss and its gradient with respect to every model parameter.
pub fn batch_loss_and_grad(
    mlp: &Mlp,
    xs: &[&[f64]],
    targets: &[f64],
    mode: TargetMode,
    weights: Option<&ClassWeights>,
) -> Result<(f64, Vec<f64>)> {
    let mut preds = Vec::with_capacity(xs.len());
    let mut traces = Vec::with_capacity(xs.len());
    for x in xs {
        let tr = mlp.trace(x)?;
        preds.push(logistic(tr.logit));
        traces.push(tr);
    }
    let (loss, dlogits) = compute_loss(&preds, targets, mode, weights)?;
    let mut grads = vec![0.0; mlp.params().len()];
    for ((x, tr), dlogit) in xs.iter().zip(&traces).zip(&dlogits) {
        mlp.accumulate_grad(x, tr, *dlogit, &mut grads);
    }
    Ok((loss, grads))
}

fn validation_loss(
    mlp: &Mlp,
    val: &Dataset,
    mode: TargetMode,
    weights: Option<&ClassWeights>,
) -> Result<f64> {
    let mut preds = Vec::with_capacity(val.len());
    for x in val.features() {
        preds.push(mlp.forward(x)?);
    }
    Ok(compute_loss(&preds, val.targets(), mode, weights)?.0)
}

/// Mini-batch training with AdamW, cosine decay, and global-norm clipping.
/// Returns the parameters with the best validation loss seen at any
/// evaluation point; identical seeds give identical models.
pub fn train_calibrator(
    train: &Dataset,
    val: &Dataset,
    feature_cfg: &FeatureConfig,
    cfg: &TrainConfig,
    mode: TargetMode,
) -> Result<CalibratorModel> {
    train_impl(train, val, feature_cfg, cfg, mode, None)
}

fn train_impl(
    train: &Dataset,
    val: &Dataset,
    feature_cfg: &FeatureConfig,
    cfg: &TrainConfig,
    mode: TargetMode,
    mut eval_trace: Option<&mut Vec<(u64, f64)>>,
) -> Result<CalibratorModel> {
    cfg.validate()?;
    feature_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Training("validation set is empty".into()));
    }
    if train.dim() != val.dim() {
        return Err(Error::Dimension(format!(
            "train features have dimension {} but validation has {}",
            train.dim(),
            val.dim()
        )));
    }
    let weights = match mode {
        TargetMode::Binary => Some(balanced_class_weights(train.targets())?),
        TargetMode::Clustering => None,
    };

    let shape = MlpShape { input: train.dim(), hidden: cfg.hidden_size };
    let mut mlp = Mlp::init(shape, derive_seed(cfg.seed, "calibrator/init"))?;
    let mut state = AdamWState::new(mlp.params().len());

    let mut best_loss = f64::INFINITY;
    let mut best_step = 0u64;
    let mut best_params = mlp.params().to_vec();
    let mut record_eval = |step: u64, loss: f64| {
        if let Some(trace) = eval_trace.as_deref_mut() {
            trace.push((step, loss));
        }
    };
    let init_loss = validation_loss(&mlp, val, mode, weights.as_ref())?;
    record_eval(0, init_loss);
    if init_loss < best_loss {
        best_loss = init_loss;
    }

    let n = train.len();
    let mut epoch = 0u64;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle_with(cfg.seed, epoch);
    let mut cursor = 0usize;
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut batch_t: Vec<f64> = Vec::with_capacity(cfg.batch_size);

    for step in 1..=cfg.max_steps {
        if cursor >= n {
            epoch += 1;
            order.shuffle_with(cfg.seed, epoch);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(n);
        batch_x.clear();
        batch_t.clear();
        for &i in &order[cursor..end] {
            batch_x.push(&train.features()[i]);
            batch_t.push(train.targets()[i]);
        }
        cursor = end;

        let (_, mut grads) = batch_loss_and_grad(&mlp, &batch_x, &batch_t, mode, weights.as_ref())?;
        clip_global_norm(&mut grads, cfg.grad_clip_norm);
        let lr = cosine_lr(step - 1, cfg.max_steps, cfg.learning_rate)?;
        adamw_step(
            mlp.params_mut(),
            &grads,
            &mut state,
            lr,
            (cfg.beta1, cfg.beta2),
            cfg.epsilon,
            cfg.weight_decay,
        )?;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let loss = validation_loss(&mlp, val, mode, weights.as_ref())?;
            record_eval(step as u64, loss);
            if loss < best_loss {
                best_loss = loss;
                best_step = step as u64;
                best_params.copy_from_slice(mlp.params());
            }
        }
    }
    if !best_loss.is_finite() {
        return Err(Error::Training(
            "no finite validation loss observed during training".into(),
        ));
    }
    Ok(CalibratorModel {
        version: CHECKPOINT_VERSION,
        feature_config: feature_cfg.clone(),
        target_mode: mode,
        mlp: Mlp::from_params(shape, best_params)?,
        best_val_loss: best_loss,
        best_step,
    })
}

trait ShuffleWith {
    fn shuffle_with(&mut self, seed: u64, epoch: u64);
}

impl ShuffleWith for Vec<usize> {
    fn shuffle_with(&mut self, seed: u64, epoch: u64) {
        use rand::seq::SliceRandom;
        let mut rng = rng_from_seed(derive_seed_indexed(seed, "calibrator/shuffle", epoch));
        self.shuffle(&mut rng);
    }
}

/// Random-search settings. The defaults mirror the reported sweep: 50 runs
/// of 250 steps, learning rate log-uniform on [1e-5, 1e-2], weight decay
/// uniform on [1e-4, 0.05].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub trials: usize,
    pub steps_per_trial: usize,
    pub learning_rate_range: (f64, f64),
    pub weight_decay_range: (f64, f64),
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            trials: 50,
            steps_per_trial: 250,
            learning_rate_range: (1e-5, 1e-2),
            weight_decay_range: (1e-4, 0.05),
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("search needs at least one trial".into()));
        }
        let (lr_lo, lr_hi) = self.learning_rate_range;
        if !(lr_lo > 0.0 && lr_hi >= lr_lo && lr_hi.is_finite()) {
            return Err(Error::Config(
                "learning-rate range must be positive and ordered".into(),
            ));
        }
        let (wd_lo, wd_hi) = self.weight_decay_range;
        if !(wd_lo >= 0.0 && wd_hi >= wd_lo && wd_hi.is_finite()) {
            return Err(Error::Config(
                "weight-decay range must be nonnegative and ordered".into(),
            ));
        }
        Ok(())
    }
}

/// Winning draw of a hyperparameter search.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// The base config with the winning learning rate and weight decay.
    pub config: TrainConfig,
    pub val_loss: f64,
    pub trial_index: usize,
}

#[derive(Clone, Copy)]
struct TrialOutcome {
    index: usize,
    learning_rate: f64,
    weight_decay: f64,
    val_loss: f64,
}

/// Seeded random search over learning rate and weight decay; trials run
/// concurrently when the parallel feature is active.
pub fn search_hyperparameters(
    train: &Dataset,
    val: &Dataset,
    feature_cfg: &FeatureConfig,
    base: &TrainConfig,
    space: &SearchSpace,
    mode: TargetMode,
) -> Result<SearchResult> {
    search_impl(train, val, feature_cfg, base, space, mode, true)
}

/// Sequential variant of [`search_hyperparameters`] with identical results.
pub fn search_hyperparameters_seq(
    train: &Dataset,
    val: &Dataset,
    feature_cfg: &FeatureConfig,
    base: &TrainConfig,
    space: &SearchSpace,
    mode: TargetMode,
) -> Result<SearchResult> {
    search_impl(train, val, feature_cfg, base, space, mode, false)
}

fn search_impl(
    train: &Dataset,
    val: &Dataset,
    feature_cfg: &FeatureConfig,
    base: &TrainConfig,
    space: &SearchSpace,
    mode: TargetMode,
    parallel: bool,
) -> Result<SearchResult> {
    base.validate()?;
    space.validate()?;
    let outcomes: Vec<Result<TrialOutcome>> = exec::map_range(space.trials, parallel, |t| {
        let mut rng = rng_from_seed(derive_seed_indexed(space.seed, "search/trial", t as u64));
        let (lr_lo, lr_hi) = space.learning_rate_range;
        let learning_rate =
            10f64.powf(lr_lo.log10() + rng.gen::<f64>() * (lr_hi.log10() - lr_lo.log10()));
        let (wd_lo, wd_hi) = space.weight_decay_range;
        let weight_decay = wd_lo + rng.gen::<f64>() * (wd_hi - wd_lo);
        let mut cfg = base.clone();
        cfg.learning_rate = learning_rate;
        cfg.weight_decay = weight_decay;
        cfg.max_steps = space.steps_per_trial;
        cfg.seed = derive_seed_indexed(space.seed, "search/train", t as u64);
        let model = train_calibrator(train, val, feature_cfg, &cfg, mode)?;
        Ok(TrialOutcome {
            index: t,
            learning_rate,
            weight_decay,
            val_loss: model.best_val_loss,
        })
    });
    let mut best: Option<TrialOutcome> = None;
    for outcome in outcomes.into_iter().flatten() {
        if outcome.val_loss.is_finite()
            && best.map_or(true, |b| outcome.val_loss < b.val_loss)
        {
            best = Some(outcome);
        }
    }
    let Some(winner) = best else {
        return Err(Error::Training(
            "every hyperparameter trial failed to produce a finite validation loss".into(),
        ));
    };
    let mut config = base.clone();
    config.learning_rate = winner.learning_rate;
    config.weight_decay = winner.weight_decay;
    Ok(SearchResult {
        config,
        val_loss: winner.val_loss,
        trial_index: winner.index,
    })
}
