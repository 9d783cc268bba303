//! Scripted corpora and endpoint doubles shared by the binary and
//! acceptance test targets.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use llmcal::corpus::CalibrationRecord;
use llmcal::gateway::{EndpointConfig, FixtureMode, LlmClient};
use llmcal::pipeline::{run_stage_with_client, PipelineConfig, Stage, StageSummary};
use llmcal::testing::{hash_embedding, topic_embedding, ScriptedTransport};

/// One scripted model interaction: the answer the fake endpoint returns for
/// a question, its token logprobs, and the two confidence self-reports.
pub struct Reply {
    pub answer: String,
    pub logprobs: Vec<f64>,
    pub percent: String,
    pub qualitative: String,
}

/// A fully scripted corpus: records to answer, the reply for each question,
/// and an embedding for every text the pipeline may send to the endpoint.
pub struct World {
    pub corpus: Vec<CalibrationRecord>,
    pub replies: HashMap<String, Reply>,
    pub embeddings: HashMap<String, Vec<f64>>,
    pub dim: usize,
}

/// Per-record script: whether the answer matches gold, what the model says
/// when asked for its confidence, and the answer token logprobs.
pub struct Item {
    pub correct: bool,
    pub percent: String,
    pub qualitative: String,
    pub logprobs: Vec<f64>,
}

pub fn topic_word(topic: usize) -> String {
    const WORDS: [&str; 8] = [
        "tide", "glacier", "turbine", "sonnet", "orchard", "basalt", "lagoon", "meteor",
    ];
    if topic < WORDS.len() {
        WORDS[topic].to_string()
    } else {
        format!("subject{topic:03}")
    }
}

pub fn question_text(topic: usize, i: usize) -> String {
    format!(
        "what does the {w} survey say about {w} site {i}?",
        w = topic_word(topic)
    )
}

pub fn gold_text(topic: usize, i: usize) -> String {
    format!("finding-{topic}-{i}")
}

impl World {
    /// Builds a topic-structured corpus where record `i` of each topic is
    /// scripted by `item`. Questions of one topic share an embedding center;
    /// answers reuse the jittered center of their topic so answer features
    /// carry the same signal.
    pub fn build(topics: usize, per_topic: usize, dim: usize, item: impl Fn(usize, usize) -> Item) -> World {
        let mut corpus = Vec::new();
        let mut replies = HashMap::new();
        let mut embeddings = HashMap::new();
        for topic in 0..topics {
            for i in 0..per_topic {
                let question = question_text(topic, i);
                let gold = gold_text(topic, i);
                let id = format!("t{topic}i{i}");
                corpus.push(CalibrationRecord::new(&id, &question, vec![gold.clone()]));

                let spec = item(topic, i);
                let answer = if spec.correct {
                    format!("it reports {gold}")
                } else {
                    format!("inconclusive notes {topic}-{i}")
                };
                embeddings.insert(
                    question.clone(),
                    topic_embedding(dim, topic as u64, i as u64, 0.01),
                );
                embeddings.insert(
                    answer.clone(),
                    topic_embedding(dim, topic as u64, (per_topic + i) as u64, 0.01),
                );
                replies.insert(
                    question,
                    Reply {
                        answer,
                        logprobs: spec.logprobs,
                        percent: spec.percent,
                        qualitative: spec.qualitative,
                    },
                );
            }
        }
        World { corpus, replies, embeddings, dim }
    }

    pub fn transport(world: &Arc<World>) -> ScriptedTransport {
        let chat = Arc::clone(world);
        let embed = Arc::clone(world);
        ScriptedTransport::new(
            move |prompt| {
                if prompt.contains("only in percent") || prompt.contains("only as one of") {
                    let reply = chat
                        .replies
                        .iter()
                        .find(|(q, _)| prompt.starts_with(q.as_str()))
                        .map(|(_, r)| r)
                        .expect("confidence prompt starts with a known question");
                    let text = if prompt.contains("only in percent") {
                        reply.percent.clone()
                    } else {
                        reply.qualitative.clone()
                    };
                    (text, None)
                } else {
                    let tail = prompt.rsplit("Question: ").next().unwrap();
                    let question = tail.strip_suffix(" Answer:").unwrap_or(tail);
                    let reply = &chat.replies[question];
                    (reply.answer.clone(), Some(reply.logprobs.clone()))
                }
            },
            move |text| {
                embed
                    .embeddings
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| hash_embedding(text, embed.dim, 99))
            },
        )
    }

    /// Recording client writing request/response pairs under `fixtures`.
    pub fn record_client(world: &Arc<World>, fixtures: &Path) -> LlmClient {
        let endpoint = EndpointConfig {
            fixture_mode: FixtureMode::Record,
            fixture_path: Some(fixtures.to_path_buf()),
            ..EndpointConfig::default()
        };
        LlmClient::new(endpoint, Some(Box::new(World::transport(world)))).unwrap()
    }
}

/// Standard trivia-style script used where the exact confidences do not
/// matter: deterministic per-topic accuracy with a few unparseable
/// self-reports mixed in.
pub fn trivia_item(topic: usize, i: usize) -> Item {
    let correct = (i % 6) < topic + 1;
    let percent = if i % 10 == 3 {
        "hard to say".to_string()
    } else if correct {
        format!("{} %", 70 + (i % 3) * 10)
    } else {
        format!("{} %", 30 + (i % 3) * 10)
    };
    let qualitative = if i % 9 == 4 {
        "shrug".to_string()
    } else if correct {
        "High".to_string()
    } else {
        "Low".to_string()
    };
    Item {
        correct,
        percent,
        qualitative,
        logprobs: vec![-0.05 * ((i % 7) as f64 + 1.0), -0.02],
    }
}

/// Small, fast pipeline configuration rooted at `dir`.
pub fn base_config(dir: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.seed = 11;
    config.paths.corpus = dir.join("corpus.jsonl");
    config.paths.fixtures = Some(dir.join("fixtures.jsonl"));
    config.paths.checkpoints = dir.join("checkpoints");
    config.paths.reports = dir.join("reports");
    config.generate.icl_examples = 3;
    config.train.optimizer.hidden_size = 16;
    config.train.optimizer.max_steps = 200;
    config.metrics.resamples = 30;
    config.quality.rouge_pairs = 40;
    config.quality.cosine_pairs = 60;
    config.quality.per_cluster = 3;
    config
}

pub fn stage_corpus(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("corpus.{}.jsonl", stage.name()))
}

/// Runs every stage in order through the library, chaining each stage's
/// output corpus into the next. `client` carries the scripted transport for
/// a record pass; `None` relies on replay fixtures.
pub fn run_chain_with(dir: &Path, config: &PipelineConfig, client: Option<&LlmClient>) -> Vec<StageSummary> {
    let mut corpus = config.paths.corpus.clone();
    let mut summaries = Vec::new();
    for stage in Stage::ALL {
        let mut stage_config = config.clone();
        stage_config.paths.corpus = corpus.clone();
        stage_config.paths.out = Some(stage_corpus(dir, stage));
        let summary = run_stage_with_client(stage, &stage_config, client)
            .unwrap_or_else(|e| panic!("stage {stage} failed: {e}"));
        corpus = summary.corpus_out.clone();
        summaries.push(summary);
    }
    summaries
}

/// Records fixtures for `world` under `dir` by running the full chain once
/// against the scripted transport. Returns the configuration used.
pub fn record_fixtures(dir: &Path, world: &Arc<World>) -> PipelineConfig {
    llmcal::corpus::save_corpus(dir.join("corpus.jsonl"), &world.corpus).unwrap();
    let mut config = base_config(dir);
    config.gateway.fixture_mode = FixtureMode::Record;
    let client = World::record_client(world, &dir.join("fixtures.jsonl"));
    run_chain_with(dir, &config, Some(&client));
    config
}

pub fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_llmcal"))
}

pub fn run_binary(args: &[&str]) -> Output {
    binary()
        .args(args)
        .output()
        .expect("pipeline binary launches")
}

/// Runs one stage through the binary and asserts it exits cleanly.
pub fn binary_stage_ok(stage: Stage, config_path: &Path, corpus: &Path, out: &Path) -> Output {
    let output = run_binary(&[
        stage.name(),
        "--config",
        config_path.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stage {stage} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Full chain through the binary in replay mode; `dir` must already hold
/// `corpus.jsonl` and `fixtures.jsonl`.
pub fn binary_replay_chain(dir: &Path, config: &PipelineConfig) {
    let mut replay = config.clone();
    replay.paths.corpus = dir.join("corpus.jsonl");
    replay.paths.out = None;
    replay.paths.fixtures = Some(dir.join("fixtures.jsonl"));
    replay.paths.checkpoints = dir.join("checkpoints");
    replay.paths.reports = dir.join("reports");
    replay.gateway.fixture_mode = FixtureMode::Replay;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, toml::to_string(&replay).unwrap()).unwrap();
    let mut corpus = dir.join("corpus.jsonl");
    for stage in Stage::ALL {
        let out = stage_corpus(dir, stage);
        binary_stage_ok(stage, &config_path, &corpus, &out);
        corpus = out;
    }
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// Artifact paths every full run must produce, relative to the run root.
pub const CHAIN_ARTIFACTS: [&str; 10] = [
    "reports/metrics.csv",
    "reports/cluster_quality.csv",
    "reports/reliability_seq_likelihood.svg",
    "reports/reliability_seq_likelihood_platt.svg",
    "reports/reliability_verbalized_percent.svg",
    "reports/reliability_verbalized_qualitative.svg",
    "reports/reliability_calibrator.svg",
    "checkpoints/calibrator.json",
    "checkpoints/platt.json",
    "corpus.report.jsonl",
];
