//! Stage-oriented pipeline over a JSONL corpus: answer generation, grading,
//! embedding, clustering, target assignment, calibrator training, baseline
//! fitting, metric evaluation, and report rendering.
//!
//! Every stage loads the input corpus, fills the fields it owns, writes a
//! new corpus file (never in place), and leaves any other artifacts
//! (checkpoints, CSV tables, SVG diagrams) in the configured directories.
//! Stages communicate only through these files, and reruns with the same
//! configuration and fixtures reproduce every artifact byte for byte.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::baselines::{
    parse_verbalized_percent, parse_verbalized_qualitative, sequence_likelihood, success_rate,
    PlattScaler,
};
use crate::calibrator::{
    featurize_record, CalibratorModel, Dataset, Embedder, FeatureConfig, TargetMode, TrainConfig,
    train_calibrator,
};
use crate::clustering::{
    assign_calibration_targets, cluster_questions, evaluate_cluster_quality, normalize_embeddings,
    ClusterAssignment, ClusterParams, EmbeddingMatrix, Normalization,
};
use crate::corpus::{
    load_corpus, sample_icl, save_corpus, split_corpus, CalibrationRecord, Split, SplitSpec,
};
use crate::error::{Error, Result};
use crate::gateway::{
    build_confidence_prompt, build_qa_prompt, ConfidenceMode, EndpointConfig, FixtureMode,
    GenerationParams, LlmClient, PromptSpec, PromptStyle, Transport,
};
use crate::grading::{grade_answer, GradeConfig};
use crate::metrics::{
    bootstrap_se, ece_binned, reliability_table, smece, MetricWithSe, DEFAULT_BINS,
    DEFAULT_BOOTSTRAP_RESAMPLES,
};
use crate::report::{quality_to_csv, render_reliability_svg, MetricReport, MetricRow};
use crate::seed::derive_seed;

/// File and directory layout for a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Input corpus JSONL.
    pub corpus: PathBuf,
    /// Output corpus JSONL; defaults to the input path with the stage name
    /// spliced in before the extension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Request/response fixture store for offline runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Directory for trained models.
    pub checkpoints: PathBuf,
    /// Directory for CSV tables and SVG diagrams.
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            out: None,
            fixtures: None,
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

/// What the generate stage asks the model for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub style: PromptStyle,
    /// Also collect a step-by-step answer per record.
    pub cot: bool,
    /// Demonstrations sampled from the train split for each answer prompt.
    pub icl_examples: usize,
    pub elicit_percent: bool,
    pub elicit_qualitative: bool,
    #[serde(flatten)]
    pub params: GenerationParams,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            style: PromptStyle::Trivia,
            cot: false,
            icl_examples: 10,
            elicit_percent: true,
            elicit_qualitative: true,
            params: GenerationParams::default(),
        }
    }
}

/// Explicit split sizes; leaving all three unset selects the 80/10/10
/// proportional split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
}

impl SplitsConfig {
    fn spec(&self, corpus_size: usize, seed: u64) -> Result<SplitSpec> {
        match (self.train_size, self.validation_size, self.test_size) {
            (None, None, None) => Ok(SplitSpec::proportional(corpus_size, seed)),
            (Some(train), Some(validation), Some(test)) => Ok(SplitSpec {
                train_size: train,
                validation_size: validation,
                test_size: test,
                seed,
            }),
            _ => Err(Error::Config(
                "set all three split sizes or none of them".into(),
            )),
        }
    }
}

/// Clustering controls for the cluster stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_samples: Option<usize>,
    pub normalization: Normalization,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 3,
            min_samples: None,
            normalization: Normalization::L2Row,
        }
    }
}

/// Training controls for the train stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainStageConfig {
    pub target_mode: TargetMode,
    #[serde(flatten)]
    pub optimizer: TrainConfig,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        Self {
            target_mode: TargetMode::Clustering,
            optimizer: TrainConfig::default(),
        }
    }
}

/// Metric binning and resampling controls for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub bins: usize,
    pub resamples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
        }
    }
}

/// Sampling counts for the cluster-quality comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub rouge_pairs: usize,
    pub cosine_pairs: usize,
    pub per_cluster: usize,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            rouge_pairs: 200,
            cosine_pairs: 1000,
            per_cluster: 5,
        }
    }
}

/// Full declarative configuration for a pipeline run: one section per
/// concern, every field optional with a default, overridable from the
/// command line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub gateway: EndpointConfig,
    pub generate: GenerateConfig,
    pub splits: SplitsConfig,
    pub grade: GradeConfig,
    pub cluster: ClusterConfig,
    pub features: FeatureConfig,
    pub train: TrainStageConfig,
    pub metrics: MetricsConfig,
    pub quality: QualityConfig,
}

impl PipelineConfig {
    /// Reads a TOML configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let config: Self = toml::from_str(&text).map_err(|e| {
            Error::Config(format!(
                "cannot parse {}: {e}",
                path.as_ref().display()
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generate.params.validate()?;
        self.grade.validate()?;
        self.features.validate()?;
        self.train.optimizer.validate()?;
        if self.cluster.min_cluster_size < 2 {
            return Err(Error::Config(
                "cluster.min_cluster_size must be at least 2".into(),
            ));
        }
        if self.cluster.normalization == Normalization::Raw {
            return Err(Error::Config(
                "cluster.normalization must be per_feature_z or l2_row".into(),
            ));
        }
        if self.metrics.bins == 0 {
            return Err(Error::Config("metrics.bins must be positive".into()));
        }
        if self.metrics.resamples < 2 {
            return Err(Error::Config(
                "metrics.resamples must be at least 2".into(),
            ));
        }
        if self.quality.rouge_pairs == 0
            || self.quality.cosine_pairs == 0
            || self.quality.per_cluster == 0
        {
            return Err(Error::Config(
                "quality pair counts and per_cluster must be positive".into(),
            ));
        }
        self.splits.spec(usize::MAX, 0).map(|_| ())?;
        Ok(())
    }

    /// Gateway settings with the fixture path falling back to
    /// `paths.fixtures`.
    pub fn effective_gateway(&self) -> EndpointConfig {
        let mut endpoint = self.gateway.clone();
        if endpoint.fixture_path.is_none() {
            endpoint.fixture_path = self.paths.fixtures.clone();
        }
        endpoint
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoints.join("calibrator.json")
    }

    fn platt_path(&self) -> PathBuf {
        self.paths.checkpoints.join("platt.json")
    }
}

/// The pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Grade,
    Embed,
    Cluster,
    Targets,
    Train,
    Baselines,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Generate,
        Stage::Grade,
        Stage::Embed,
        Stage::Cluster,
        Stage::Targets,
        Stage::Train,
        Stage::Baselines,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Grade => "grade",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Targets => "targets",
            Stage::Train => "train",
            Stage::Baselines => "baselines",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What a completed stage produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    pub records: usize,
    pub corpus_out: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

fn default_out_path(stage: Stage, corpus: &Path) -> PathBuf {
    let stem = corpus
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    corpus.with_file_name(format!("{stem}.{}.jsonl", stage.name()))
}

fn needs_embedder(cfg: &FeatureConfig) -> bool {
    cfg.use_question_embedding || cfg.use_answer_embedding || cfg.use_cot_answer
}

fn stage_needs_client(stage: Stage, config: &PipelineConfig) -> bool {
    match stage {
        Stage::Generate | Stage::Embed => true,
        Stage::Train => needs_embedder(&config.features),
        Stage::Evaluate | Stage::Report => {
            match CalibratorModel::load(&config.checkpoint_path()) {
                Ok(model) => needs_embedder(&model.feature_config),
                Err(_) => false,
            }
        }
        Stage::Grade | Stage::Cluster | Stage::Targets | Stage::Baselines => false,
    }
}

/// Builds a client from the gateway settings: replay mode runs without a
/// transport, other modes attach the HTTP transport when compiled in.
pub fn build_client(config: &PipelineConfig) -> Result<LlmClient> {
    let endpoint = config.effective_gateway();
    endpoint.validate()?;
    let transport: Option<Box<dyn Transport>> = if endpoint.fixture_mode == FixtureMode::Replay {
        None
    } else {
        http_transport(&endpoint)?
    };
    LlmClient::new(endpoint, transport)
}

#[cfg(feature = "live")]
fn http_transport(endpoint: &EndpointConfig) -> Result<Option<Box<dyn Transport>>> {
    Ok(Some(Box::new(crate::gateway::HttpTransport::new(
        endpoint,
    )?)))
}

#[cfg(not(feature = "live"))]
fn http_transport(_: &EndpointConfig) -> Result<Option<Box<dyn Transport>>> {
    Ok(None)
}

/// Runs one stage against the configured corpus and artifact paths,
/// constructing a gateway client when the stage needs one.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<StageSummary> {
    let client = if stage_needs_client(stage, config) {
        Some(build_client(config)?)
    } else {
        None
    };
    run_stage_with_client(stage, config, client.as_ref())
}

/// Like [`run_stage`] but with a caller-supplied client, so tests and
/// embedders can inject custom transports.
pub fn run_stage_with_client(
    stage: Stage,
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<StageSummary> {
    config.validate()?;
    let out = config
        .paths
        .out
        .clone()
        .unwrap_or_else(|| default_out_path(stage, &config.paths.corpus));
    if out == config.paths.corpus {
        return Err(Error::Config(format!(
            "output {} would overwrite the input corpus; stages always write a new file",
            out.display()
        )));
    }
    let records = load_corpus(&config.paths.corpus)?;
    let (records, artifacts) = apply_stage(stage, records, config, client)?;
    save_corpus(&out, &records)?;
    Ok(StageSummary {
        stage,
        records: records.len(),
        corpus_out: out,
        artifacts,
    })
}

fn apply_stage(
    stage: Stage,
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<(Vec<CalibrationRecord>, Vec<PathBuf>)> {
    match stage {
        Stage::Generate => Ok((stage_generate(records, config, client)?, Vec::new())),
        Stage::Grade => Ok((stage_grade(records, config)?, Vec::new())),
        Stage::Embed => Ok((stage_embed(records, client)?, Vec::new())),
        Stage::Cluster => Ok((stage_cluster(records, config)?, Vec::new())),
        Stage::Targets => Ok((stage_targets(records, config)?, Vec::new())),
        Stage::Train => stage_train(records, config, client),
        Stage::Baselines => stage_baselines(records, config),
        Stage::Evaluate => stage_evaluate(records, config, client),
        Stage::Report => stage_report(records, config, client),
    }
}

fn require_client<'a>(client: Option<&'a LlmClient>, stage: Stage) -> Result<&'a LlmClient> {
    client.ok_or_else(|| {
        Error::Config(format!(
            "the {} stage needs a gateway client but none was configured",
            stage.name()
        ))
    })
}

/// Assigns splits when the corpus has none, preserving any complete
/// existing assignment; a partial assignment is rejected.
fn ensure_splits(
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
) -> Result<Vec<CalibrationRecord>> {
    let assigned = records.iter().filter(|r| r.split.is_some()).count();
    if assigned == records.len() {
        return Ok(records);
    }
    if assigned > 0 {
        return Err(Error::Config(format!(
            "{assigned} of {} records have split assignments; clear or complete them",
            records.len()
        )));
    }
    let spec = config
        .splits
        .spec(records.len(), derive_seed(config.seed, "splits"))?;
    split_corpus(records, &spec)
}

fn subset<'a>(records: &'a [CalibrationRecord], split: Split) -> Vec<&'a CalibrationRecord> {
    records
        .iter()
        .filter(|r| r.split == Some(split))
        .collect()
}

fn stage_generate(
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<Vec<CalibrationRecord>> {
    let client = require_client(client, Stage::Generate)?;
    let mut records = ensure_splits(records, config)?;
    let gen = &config.generate;
    let train_pool: Vec<CalibrationRecord> = records
        .iter()
        .filter(|r| r.split == Some(Split::Train))
        .cloned()
        .collect();

    let spec_for = |record: &CalibrationRecord, cot: bool| -> Result<PromptSpec> {
        let demos = sample_icl(&train_pool, gen.icl_examples, config.seed, &record.id)?;
        Ok(PromptSpec {
            style: gen.style,
            cot,
            icl_examples: demos
                .iter()
                .map(|d| (d.question.clone(), d.gold_answers[0].clone()))
                .collect(),
            confidence_mode: ConfidenceMode::None,
        })
    };

    let mut prompts = Vec::with_capacity(records.len());
    for record in &records {
        prompts.push(build_qa_prompt(record, &spec_for(record, false)?)?);
    }
    let generations = client.generate_batch(&prompts, &gen.params)?;
    for (record, generation) in records.iter_mut().zip(generations) {
        record.model_answer = Some(generation.text);
        record.token_logprobs = generation.token_logprobs;
    }

    if gen.cot {
        let mut prompts = Vec::with_capacity(records.len());
        for record in &records {
            prompts.push(build_qa_prompt(record, &spec_for(record, true)?)?);
        }
        let generations = client.generate_batch(&prompts, &gen.params)?;
        for (record, generation) in records.iter_mut().zip(generations) {
            record.cot_answer = Some(generation.text);
        }
    }

    for (mode, enabled) in [
        (ConfidenceMode::Percent, gen.elicit_percent),
        (ConfidenceMode::Qualitative, gen.elicit_qualitative),
    ] {
        if !enabled {
            continue;
        }
        let mut indices = Vec::new();
        let mut prompts = Vec::new();
        for (i, record) in records.iter().enumerate() {
            let answer = record.model_answer.as_deref().unwrap_or("");
            if answer.trim().is_empty() {
                continue;
            }
            indices.push(i);
            prompts.push(build_confidence_prompt(&record.question, answer, mode)?);
        }
        let generations = client.generate_batch(&prompts, &gen.params)?;
        for (&i, generation) in indices.iter().zip(generations) {
            match mode {
                ConfidenceMode::Percent => {
                    records[i].verbalized_percent_raw = Some(generation.text)
                }
                ConfidenceMode::Qualitative => {
                    records[i].verbalized_qual_raw = Some(generation.text)
                }
                ConfidenceMode::None => unreachable!("modes listed above"),
            }
        }
    }
    Ok(records)
}

fn stage_grade(
    mut records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
) -> Result<Vec<CalibrationRecord>> {
    for record in &mut records {
        let answer = record.model_answer.as_deref().ok_or(Error::MissingField {
            field: "model_answer",
            record_id: record.id.clone(),
            context: "grading needs generated answers; run the generate stage first".into(),
        })?;
        record.correct = Some(grade_answer(answer, &record.gold_answers, &config.grade)?);
    }
    Ok(records)
}

fn stage_embed(
    mut records: Vec<CalibrationRecord>,
    client: Option<&LlmClient>,
) -> Result<Vec<CalibrationRecord>> {
    let client = require_client(client, Stage::Embed)?;
    let texts: Vec<String> = records.iter().map(|r| r.question.clone()).collect();
    let matrix = client.embed_texts(&texts)?;
    for (record, row) in records.iter_mut().zip(matrix.data.rows()) {
        record.embedding = Some(row.to_vec());
    }
    Ok(records)
}

fn embedding_rows(records: &[CalibrationRecord], context: &str) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            r.embedding.clone().ok_or_else(|| Error::MissingField {
                field: "embedding",
                record_id: r.id.clone(),
                context: context.into(),
            })
        })
        .collect()
}

fn stage_cluster(
    mut records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
) -> Result<Vec<CalibrationRecord>> {
    let rows = embedding_rows(&records, "clustering needs embeddings; run the embed stage first")?;
    let raw = EmbeddingMatrix::from_rows(&rows)?;
    let matrix = normalize_embeddings(&raw, config.cluster.normalization)?;
    let min_samples = config
        .cluster
        .min_samples
        .unwrap_or(config.cluster.min_cluster_size);
    let assignment = cluster_questions(&matrix, config.cluster.min_cluster_size, min_samples)?;
    for (record, &label) in records.iter_mut().zip(&assignment.labels) {
        record.cluster_id = Some(label);
    }
    Ok(records)
}

fn assignment_from_records(
    records: &[CalibrationRecord],
    config: &PipelineConfig,
    context: &str,
) -> Result<ClusterAssignment> {
    let labels = records
        .iter()
        .map(|r| {
            r.cluster_id.ok_or_else(|| Error::MissingField {
                field: "cluster_id",
                record_id: r.id.clone(),
                context: context.into(),
            })
        })
        .collect::<Result<Vec<i64>>>()?;
    let params = ClusterParams {
        min_cluster_size: config.cluster.min_cluster_size,
        min_samples: config
            .cluster
            .min_samples
            .unwrap_or(config.cluster.min_cluster_size),
        metric: "euclidean".into(),
    };
    Ok(ClusterAssignment::from_labels(labels, params))
}

fn stage_targets(
    mut records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
) -> Result<Vec<CalibrationRecord>> {
    let assignment = assignment_from_records(
        &records,
        config,
        "target assignment needs cluster labels; run the cluster stage first",
    )?;
    for record in &records {
        if record.correct.is_none() {
            return Err(Error::MissingField {
                field: "correct",
                record_id: record.id.clone(),
                context: "target assignment needs graded records; run the grade stage first"
                    .into(),
            });
        }
    }
    let correctness: Vec<Option<bool>> = records.iter().map(|r| r.correct).collect();
    let targets = assign_calibration_targets(&assignment, &correctness)?;
    for (record, target) in records.iter_mut().zip(targets) {
        record.target = Some(target);
    }
    Ok(records)
}

struct ClientEmbedder<'a> {
    client: &'a LlmClient,
    dim: usize,
}

impl Embedder for ClientEmbedder<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let matrix = self.client.embed_texts(&[text.to_string()])?;
        Ok(matrix.data.row(0).to_vec())
    }
}

struct StubEmbedder;

impl Embedder for StubEmbedder {
    fn dim(&self) -> usize {
        0
    }

    fn embed(&self, _: &str) -> Result<Vec<f64>> {
        Err(Error::Config(
            "the active feature configuration does not use embeddings".into(),
        ))
    }
}

fn client_embedder<'a>(
    client: Option<&'a LlmClient>,
    records: &[CalibrationRecord],
    purpose: &str,
) -> Result<ClientEmbedder<'a>> {
    let client = client.ok_or_else(|| {
        Error::Config(format!(
            "{purpose} needs an embedding client but none was configured"
        ))
    })?;
    let dim = match records.iter().find_map(|r| r.embedding.as_ref()) {
        Some(embedding) => embedding.len(),
        None => {
            let first = records
                .first()
                .ok_or_else(|| Error::Validation("corpus is empty".into()))?;
            client.embed_texts(&[first.question.clone()])?.dim()
        }
    };
    Ok(ClientEmbedder { client, dim })
}

fn stage_train(
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<(Vec<CalibrationRecord>, Vec<PathBuf>)> {
    let records = ensure_splits(records, config)?;
    let train_records: Vec<CalibrationRecord> =
        subset(&records, Split::Train).into_iter().cloned().collect();
    let val_records: Vec<CalibrationRecord> = subset(&records, Split::Validation)
        .into_iter()
        .cloned()
        .collect();
    if train_records.is_empty() || val_records.is_empty() {
        return Err(Error::Validation(format!(
            "training needs nonempty train and validation splits, got {} and {}",
            train_records.len(),
            val_records.len()
        )));
    }
    let stub = StubEmbedder;
    let holder;
    let embedder: &dyn Embedder = if needs_embedder(&config.features) {
        holder = client_embedder(client, &records, "calibrator training")?;
        &holder
    } else {
        &stub
    };
    let mode = config.train.target_mode;
    let train_set = Dataset::from_records(&train_records, &config.features, embedder, mode)?;
    let val_set = Dataset::from_records(&val_records, &config.features, embedder, mode)?;
    let mut optimizer = config.train.optimizer.clone();
    optimizer.seed = derive_seed(config.seed, "stage/train");
    let model = train_calibrator(&train_set, &val_set, &config.features, &optimizer, mode)?;
    std::fs::create_dir_all(&config.paths.checkpoints)?;
    let path = config.checkpoint_path();
    model.save(&path)?;
    Ok((records, vec![path]))
}

fn likelihood_outcome_pairs(records: &[&CalibrationRecord]) -> (Vec<f64>, Vec<bool>) {
    let mut probs = Vec::new();
    let mut outcomes = Vec::new();
    for record in records {
        let (Some(logprobs), Some(correct)) = (&record.token_logprobs, record.correct) else {
            continue;
        };
        if let Ok(p) = sequence_likelihood(logprobs) {
            probs.push(p);
            outcomes.push(correct);
        }
    }
    (probs, outcomes)
}

fn stage_baselines(
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
) -> Result<(Vec<CalibrationRecord>, Vec<PathBuf>)> {
    let records = ensure_splits(records, config)?;
    let (probs, outcomes) = likelihood_outcome_pairs(&subset(&records, Split::Validation));
    if probs.is_empty() {
        return Err(Error::Validation(
            "no validation records with token logprobs and grades; run the generate and grade \
             stages first"
                .into(),
        ));
    }
    let scaler = PlattScaler::fit(&probs, &outcomes)?;
    std::fs::create_dir_all(&config.paths.checkpoints)?;
    let path = config.platt_path();
    let mut body = serde_json::to_string_pretty(&scaler)?;
    body.push('\n');
    std::fs::write(&path, body)?;
    Ok((records, vec![path]))
}

/// The records metrics are computed over: the test split when the corpus
/// has split assignments, otherwise every record.
fn eval_subset<'a>(records: &'a [CalibrationRecord]) -> Result<Vec<&'a CalibrationRecord>> {
    if records.iter().any(|r| r.split.is_some()) {
        let test = subset(records, Split::Test);
        if test.is_empty() {
            return Err(Error::Validation(
                "the corpus has split assignments but no test records".into(),
            ));
        }
        Ok(test)
    } else {
        Ok(records.iter().collect())
    }
}

fn require_graded_with_targets(eval: &[&CalibrationRecord]) -> Result<Vec<bool>> {
    let mut outcomes = Vec::with_capacity(eval.len());
    for record in eval {
        let correct = record.correct.ok_or_else(|| Error::MissingField {
            field: "correct",
            record_id: record.id.clone(),
            context: "evaluation needs graded records; run the grade stage first".into(),
        })?;
        if record.target.is_none() {
            return Err(Error::MissingField {
                field: "target",
                record_id: record.id.clone(),
                context: "evaluation needs calibration targets; run the targets stage first"
                    .into(),
            });
        }
        outcomes.push(correct);
    }
    Ok(outcomes)
}

/// Per-method confidences over the evaluation subset; `None` marks a record
/// whose confidence could not be parsed or computed.
fn method_confidences(
    records: &[CalibrationRecord],
    eval: &[&CalibrationRecord],
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let mut methods: Vec<(String, Vec<Option<f64>>)> = Vec::new();

    if eval.iter().any(|r| r.token_logprobs.is_some()) {
        let likelihoods: Vec<Option<f64>> = eval
            .iter()
            .map(|r| {
                r.token_logprobs
                    .as_ref()
                    .and_then(|lp| sequence_likelihood(lp).ok())
            })
            .collect();
        let scaler = if config.platt_path().exists() {
            let text = std::fs::read_to_string(config.platt_path())?;
            Some(serde_json::from_str::<PlattScaler>(&text)?)
        } else {
            let (probs, outcomes) = likelihood_outcome_pairs(&subset(records, Split::Validation));
            if probs.is_empty() {
                None
            } else {
                Some(PlattScaler::fit(&probs, &outcomes)?)
            }
        };
        methods.push(("seq_likelihood".into(), likelihoods.clone()));
        match scaler {
            Some(scaler) => methods.push((
                "seq_likelihood_platt".into(),
                likelihoods
                    .iter()
                    .map(|o| o.map(|p| scaler.apply(p)))
                    .collect(),
            )),
            None => log::warn!(
                "skipping the rescaled likelihood baseline: no validation records to fit on"
            ),
        }
    }

    if eval.iter().any(|r| r.verbalized_percent_raw.is_some()) {
        methods.push((
            "verbalized_percent".into(),
            eval.iter()
                .map(|r| {
                    r.verbalized_percent_raw
                        .as_deref()
                        .and_then(parse_verbalized_percent)
                })
                .collect(),
        ));
    }

    if eval.iter().any(|r| r.verbalized_qual_raw.is_some()) {
        methods.push((
            "verbalized_qualitative".into(),
            eval.iter()
                .map(|r| {
                    r.verbalized_qual_raw
                        .as_deref()
                        .and_then(parse_verbalized_qualitative)
                })
                .collect(),
        ));
    }

    if config.checkpoint_path().exists() {
        let model = CalibratorModel::load(&config.checkpoint_path())?;
        let stub = StubEmbedder;
        let holder;
        let embedder: &dyn Embedder = if needs_embedder(&model.feature_config) {
            holder = client_embedder(client, records, "calibrator evaluation")?;
            &holder
        } else {
            &stub
        };
        let mut confidences = Vec::with_capacity(eval.len());
        for record in eval {
            let features = featurize_record(record, &model.feature_config, embedder)?;
            confidences.push(Some(model.predict(&features)?));
        }
        methods.push(("calibrator".into(), confidences));
    }

    Ok(methods)
}

fn with_method_context(method: &str, metric: &str, err: Error) -> Error {
    Error::Metric(format!("method {method}, metric {metric}: {err}"))
}

fn metric_row(
    method: &str,
    options: &[Option<f64>],
    outcomes: &[bool],
    config: &MetricsConfig,
    seed: u64,
) -> Result<Option<MetricRow>> {
    let label = |metric: &str| derive_seed(seed, &format!("evaluate/{metric}/{method}"));
    let indicator: Vec<f64> = options
        .iter()
        .map(|o| if o.is_some() { 1.0 } else { 0.0 })
        .collect();
    let placeholder = vec![false; options.len()];
    let success_value = success_rate(options)?;
    let success_se = bootstrap_se(&indicator, &placeholder, config.resamples, label("success"), |c, _| {
        Ok(c.iter().sum::<f64>() / c.len() as f64)
    })
    .map_err(|e| with_method_context(method, "success", e))?;
    let success = MetricWithSe {
        value: success_value,
        se: success_se.se,
    };

    let mut confidences = Vec::new();
    let mut parsed_outcomes = Vec::new();
    for (option, &outcome) in options.iter().zip(outcomes) {
        if let Some(confidence) = option {
            confidences.push(*confidence);
            parsed_outcomes.push(outcome);
        }
    }
    if confidences.is_empty() {
        log::warn!("method {method} produced no usable confidences; skipping its metric row");
        return Ok(None);
    }

    let bins = config.bins;
    let brier = bootstrap_se(
        &confidences,
        &parsed_outcomes,
        config.resamples,
        label("brier"),
        crate::metrics::brier,
    )
    .map_err(|e| with_method_context(method, "brier", e))?;
    let ece = bootstrap_se(
        &confidences,
        &parsed_outcomes,
        config.resamples,
        label("ece"),
        |c, o| ece_binned(c, o, bins),
    )
    .map_err(|e| with_method_context(method, "ece", e))?;
    let smece_stat = bootstrap_se(
        &confidences,
        &parsed_outcomes,
        config.resamples,
        label("smece"),
        |c, o| smece(c, o),
    )
    .map_err(|e| with_method_context(method, "smece", e))?;
    let auroc = bootstrap_se(
        &confidences,
        &parsed_outcomes,
        config.resamples,
        label("auroc"),
        crate::metrics::auroc,
    )
    .map_err(|e| with_method_context(method, "auroc", e))?;

    Ok(Some(MetricRow {
        method: method.to_string(),
        success,
        brier,
        ece,
        smece: smece_stat,
        auroc,
    }))
}

fn stage_evaluate(
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<(Vec<CalibrationRecord>, Vec<PathBuf>)> {
    let eval = eval_subset(&records)?;
    let outcomes = require_graded_with_targets(&eval)?;
    let methods = method_confidences(&records, &eval, config, client)?;
    if methods.is_empty() {
        return Err(Error::Validation(
            "no method produced confidences; run the generate stage or train a calibrator first"
                .into(),
        ));
    }
    let mut report = MetricReport::default();
    for (method, options) in &methods {
        if let Some(row) = metric_row(method, options, &outcomes, &config.metrics, config.seed)? {
            report.rows.push(row);
        }
    }
    std::fs::create_dir_all(&config.paths.reports)?;
    let path = config.paths.reports.join("metrics.csv");
    report.write_csv(&path)?;
    Ok((records, vec![path]))
}

fn stage_report(
    records: Vec<CalibrationRecord>,
    config: &PipelineConfig,
    client: Option<&LlmClient>,
) -> Result<(Vec<CalibrationRecord>, Vec<PathBuf>)> {
    let eval = eval_subset(&records)?;
    let mut outcomes = Vec::with_capacity(eval.len());
    for record in &eval {
        outcomes.push(record.correct.ok_or_else(|| Error::MissingField {
            field: "correct",
            record_id: record.id.clone(),
            context: "reliability diagrams need graded records; run the grade stage first".into(),
        })?);
    }
    let methods = method_confidences(&records, &eval, config, client)?;
    std::fs::create_dir_all(&config.paths.reports)?;
    let mut artifacts = Vec::new();

    for (method, options) in &methods {
        let mut confidences = Vec::new();
        let mut parsed_outcomes = Vec::new();
        for (option, &outcome) in options.iter().zip(&outcomes) {
            if let Some(confidence) = option {
                confidences.push(*confidence);
                parsed_outcomes.push(outcome);
            }
        }
        if confidences.is_empty() {
            log::warn!("method {method} produced no usable confidences; skipping its diagram");
            continue;
        }
        let bins = reliability_table(&confidences, &parsed_outcomes, config.metrics.bins)?;
        let svg = render_reliability_svg(&bins, method);
        let path = config
            .paths
            .reports
            .join(format!("reliability_{method}.svg"));
        std::fs::write(&path, svg)?;
        artifacts.push(path);
    }

    let assignment = assignment_from_records(
        &records,
        config,
        "the cluster-quality table needs cluster labels; run the cluster stage first",
    )?;
    let rows = embedding_rows(
        &records,
        "the cluster-quality table needs embeddings; run the embed stage first",
    )?;
    let matrix = EmbeddingMatrix::from_rows(&rows)?;
    let questions: Vec<String> = records.iter().map(|r| r.question.clone()).collect();
    let quality = evaluate_cluster_quality(
        &assignment,
        &questions,
        &matrix,
        derive_seed(config.seed, "stage/quality"),
        config.quality.rouge_pairs,
        config.quality.cosine_pairs,
        config.quality.per_cluster,
    )?;
    let path = config.paths.reports.join("cluster_quality.csv");
    std::fs::write(&path, quality_to_csv(&quality))?;
    artifacts.push(path);

    Ok((records, artifacts))
}
