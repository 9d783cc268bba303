//! Acceptance suite: one test per shipping criterion. Every test prints a
//! single pass/fail line with its runtime; a process-wide lock keeps the
//! criteria sequential so runtime budgets stay meaningful.

mod util;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use llmcal::baselines::{
    parse_verbalized_percent, parse_verbalized_qualitative, PlattScaler, QUALITATIVE_SCALE,
};
use llmcal::calibrator::{
    balanced_class_weights, batch_loss_and_grad, train_calibrator, Dataset, Embedder,
    FeatureConfig, Mlp, MlpShape, TargetMode, TrainConfig,
};
use llmcal::clustering::{
    cluster_questions, evaluate_cluster_quality, mutual_reachability_mst, normalize_embeddings,
    EmbeddingMatrix, Normalization,
};
use llmcal::corpus::{load_corpus, save_corpus, CalibrationRecord, Split};
use llmcal::metrics::{auroc, ece_binned};
use llmcal::pipeline::{run_stage_with_client, Stage};
use llmcal::seed::{derive_seed, rng_from_seed};
use llmcal::testing::{hash_embedding, topic_embedding};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use util::*;

static GATE: Mutex<()> = Mutex::new(());

fn criterion(number: u32, name: &str, budget_secs: Option<f64>, body: impl FnOnce()) {
    let _serial = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed().as_secs_f64();
    let within = budget_secs.map_or(true, |budget| elapsed <= budget);
    let verdict = if result.is_ok() && within { "pass" } else { "FAIL" };
    println!("criterion {number} ({name}): {verdict} [{elapsed:.1}s]");
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
    if let Some(budget) = budget_secs {
        assert!(within, "criterion {number} ran {elapsed:.1}s, over its {budget:.0}s budget");
    }
}

fn oracle_ece(conf: &[f64], out: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let (mut count, mut conf_sum, mut hits) = (0.0f64, 0.0f64, 0.0f64);
        for (&c, &y) in conf.iter().zip(out) {
            if c >= lo && (c < hi || b == bins - 1) {
                count += 1.0;
                conf_sum += c;
                hits += f64::from(y);
            }
        }
        if count > 0.0 {
            total += (count / n) * (hits / count - conf_sum / count).abs();
        }
    }
    total
}

fn oracle_auroc(conf: &[f64], out: &[bool]) -> f64 {
    let pos: Vec<f64> = conf.iter().zip(out).filter(|(_, &y)| y).map(|(&c, _)| c).collect();
    let neg: Vec<f64> = conf.iter().zip(out).filter(|(_, &y)| !y).map(|(&c, _)| c).collect();
    let mut wins = 0.0f64;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    criterion(1, "metric oracle equivalence", Some(10.0), || {
        let mut rng = rng_from_seed(101);
        for series in 0..100 {
            let n = rng.gen_range(2..=500);
            let conf: Vec<f64> = (0..n)
                .map(|_| {
                    if series % 2 == 0 {
                        // Quantized series put mass exactly on bin edges and
                        // produce heavy ties.
                        rng.gen_range(0..=20) as f64 / 20.0
                    } else {
                        rng.gen()
                    }
                })
                .collect();
            let mut out: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            out[0] = true;
            if n > 1 {
                out[1] = false;
            }

            let mine = ece_binned(&conf, &out, 10).unwrap();
            let oracle = oracle_ece(&conf, &out, 10);
            assert!(
                (mine - oracle).abs() <= 1e-12,
                "series {series}: binned calibration error {mine} vs oracle {oracle}"
            );

            let mine = auroc(&conf, &out).unwrap();
            let oracle = oracle_auroc(&conf, &out);
            assert!(
                mine == oracle,
                "series {series}: rank AUROC {mine} != pairwise AUROC {oracle}"
            );
        }
    });
}

#[test]
fn criterion_2_gradient_fidelity() {
    criterion(2, "gradient fidelity", Some(30.0), || {
        let mut rng = rng_from_seed(202);
        for trial in 0..50u64 {
            let input = rng.gen_range(1..=6);
            let hidden = rng.gen_range(1..=5);
            let batch = rng.gen_range(1..=8);
            let shape = MlpShape { input, hidden };
            let mlp = Mlp::init(shape, 1000 + trial).unwrap();
            let xs_owned: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let xs: Vec<&[f64]> = xs_owned.iter().map(Vec::as_slice).collect();
            let mode = if trial % 2 == 0 { TargetMode::Clustering } else { TargetMode::Binary };
            let targets: Vec<f64> = match mode {
                TargetMode::Clustering => (0..batch).map(|_| rng.gen()).collect(),
                TargetMode::Binary => {
                    let mut t: Vec<f64> =
                        (0..batch).map(|_| f64::from(rng.gen_bool(0.5))).collect();
                    t[0] = 1.0;
                    if batch > 1 {
                        t[1] = 0.0;
                    }
                    t
                }
            };
            let weights = match mode {
                TargetMode::Binary if batch > 1 && trial % 4 == 1 => {
                    Some(balanced_class_weights(&targets).unwrap())
                }
                _ => None,
            };

            let (_, analytic) =
                batch_loss_and_grad(&mlp, &xs, &targets, mode, weights.as_ref()).unwrap();
            let eps = 1e-5;
            let base = mlp.params().to_vec();
            let mut numeric = vec![0.0; base.len()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let loss_at = |delta: f64| {
                    let mut params = base.clone();
                    params[i] += delta;
                    let probe = Mlp::from_params(shape, params).unwrap();
                    batch_loss_and_grad(&probe, &xs, &targets, mode, weights.as_ref())
                        .unwrap()
                        .0
                };
                *slot = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            }

            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let rel = diff / (norm(&analytic) + norm(&numeric)).max(1e-8);
            assert!(
                rel <= 1e-4,
                "trial {trial} ({mode:?}, {input}x{hidden}, batch {batch}): relative gradient error {rel:.3e}"
            );
        }
    });
}

fn oracle_mst_weights(rows: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let n = rows.len();
    let dist = |i: usize, j: usize| -> f64 {
        rows[i]
            .iter()
            .zip(&rows[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut core = vec![0.0; n];
    for (i, slot) in core.iter_mut().enumerate() {
        let mut ds: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(i, j)).collect();
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        *slot = ds[min_samples - 1];
    }
    let reach = |i: usize, j: usize| dist(i, j).max(core[i]).max(core[j]);

    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    in_tree[0] = true;
    for (j, slot) in best.iter_mut().enumerate().skip(1) {
        *slot = reach(0, j);
    }
    let mut weights = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let (next, &w) = best
            .iter()
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        weights.push(w);
        in_tree[next] = true;
        for j in 0..n {
            if !in_tree[j] {
                best[j] = best[j].min(reach(next, j));
            }
        }
    }
    weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    weights
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    let mut table: HashMap<(i64, i64), f64> = HashMap::new();
    let mut rows: HashMap<i64, f64> = HashMap::new();
    let mut cols: HashMap<i64, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let choose2 = |v: f64| v * (v - 1.0) / 2.0;
    let joint: f64 = table.values().map(|&v| choose2(v)).sum();
    let row_sum: f64 = rows.values().map(|&v| choose2(v)).sum();
    let col_sum: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = row_sum * col_sum / choose2(a.len() as f64);
    let maximum = 0.5 * (row_sum + col_sum);
    if maximum == expected {
        1.0
    } else {
        (joint - expected) / (maximum - expected)
    }
}

#[test]
fn criterion_3_density_clustering_correctness() {
    criterion(3, "density clustering correctness", Some(60.0), || {
        let mut rng = rng_from_seed(303);
        for instance in 0..50 {
            let n = rng.gen_range(5..=200);
            let dim = rng.gen_range(2..=8);
            let min_samples = rng.gen_range(1..=4.min(n - 1));
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let m = EmbeddingMatrix::from_rows(&rows).unwrap();
            let edges = mutual_reachability_mst(&m, min_samples).unwrap();
            assert_eq!(edges.len(), n - 1);
            let mut mine: Vec<f64> = edges.iter().map(|e| e.weight).collect();
            mine.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle = oracle_mst_weights(&rows, min_samples);
            for (k, (a, b)) in mine.iter().zip(&oracle).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-9,
                    "instance {instance} edge {k}: {a} vs oracle {b}"
                );
            }
            let total: f64 = mine.iter().sum();
            let oracle_total: f64 = oracle.iter().sum();
            assert!((total - oracle_total).abs() <= 1e-9, "instance {instance} total weight");
        }

        let centers = [
            [20.0, 0.0, 0.0, 0.0],
            [0.0, 20.0, 0.0, 0.0],
            [0.0, 0.0, 20.0, 0.0],
        ];
        for seed in 0..5 {
            let mut rng = rng_from_seed(330 + seed);
            let mut rows = Vec::new();
            let mut truth = Vec::new();
            for (k, center) in centers.iter().enumerate() {
                for _ in 0..30 {
                    rows.push(center.iter().map(|&c| c + 0.5 * gauss(&mut rng)).collect());
                    truth.push(k as i64);
                }
            }
            let raw = EmbeddingMatrix::from_rows(&rows).unwrap();
            let m = normalize_embeddings(&raw, Normalization::L2Row).unwrap();
            let assignment = cluster_questions(&m, 3, 3).unwrap();
            let noise = assignment.n_noise();
            assert!(
                noise * 20 <= rows.len(),
                "seed {seed}: {noise} noise points of {}",
                rows.len()
            );
            let mut kept_true = Vec::new();
            let mut kept_pred = Vec::new();
            for (i, &label) in assignment.labels.iter().enumerate() {
                if label >= 0 {
                    kept_true.push(truth[i]);
                    kept_pred.push(label);
                }
            }
            let ari = adjusted_rand_index(&kept_true, &kept_pred);
            assert!(ari >= 0.99, "seed {seed}: adjusted Rand index {ari}");
        }
    });
}

#[test]
fn criterion_4_target_construction() {
    criterion(4, "cluster-accuracy target construction", None, || {
        let dim = 16;
        let mut sizes = vec![12usize; 45];
        sizes.extend([3usize; 5]);
        let mut rng = rng_from_seed(405);
        let mut records = Vec::new();
        let mut topic_of = Vec::new();
        let mut true_acc = Vec::new();
        for (t, &size) in sizes.iter().enumerate() {
            let p: f64 = rng.gen();
            true_acc.push(p);
            let hits = (p * size as f64).round() as usize;
            for i in 0..size {
                let mut record = CalibrationRecord::new(
                    format!("t{t}i{i}"),
                    format!("topic {t} question {i}"),
                    vec!["unused".to_string()],
                );
                record.embedding = Some(topic_embedding(dim, t as u64, i as u64, 0.005));
                record.correct = Some(i < hits);
                records.push(record);
                topic_of.push(t);
            }
        }

        let dir = TempDir::new().unwrap();
        save_corpus(dir.path().join("corpus.jsonl"), &records).unwrap();
        let mut config = base_config(dir.path());
        config.cluster.min_samples = Some(1);
        for stage in [Stage::Cluster, Stage::Targets] {
            let mut stage_config = config.clone();
            stage_config.paths.corpus = if stage == Stage::Cluster {
                dir.path().join("corpus.jsonl")
            } else {
                stage_corpus(dir.path(), Stage::Cluster)
            };
            stage_config.paths.out = Some(stage_corpus(dir.path(), stage));
            run_stage_with_client(stage, &stage_config, None).unwrap();
        }

        let finished = load_corpus(stage_corpus(dir.path(), Stage::Targets)).unwrap();
        let within = finished
            .iter()
            .enumerate()
            .filter(|(i, r)| (r.target.unwrap() - true_acc[topic_of[*i]]).abs() <= 0.05)
            .count();
        let frac = within as f64 / finished.len() as f64;
        assert!(frac >= 0.95, "only {frac:.3} of records within 0.05 of truth");

        let mut cluster_members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, r) in finished.iter().enumerate() {
            let label = r.cluster_id.unwrap();
            if label >= 0 {
                cluster_members.entry(label).or_default().push(i);
            }
        }
        let mut modes_seen = BTreeSet::new();
        let mut small_clusters = 0;
        for members in cluster_members.values().filter(|m| m.len() == 3) {
            small_clusters += 1;
            for &i in members {
                let target = finished[i].target.unwrap();
                let third = (target * 3.0).round() / 3.0;
                assert!(
                    (target - third).abs() <= 1e-9 && (0.0..=1.0).contains(&third),
                    "size-3 cluster target {target} is not a third"
                );
                modes_seen.insert((target * 3.0).round() as i64);
            }
        }
        assert!(small_clusters >= 4, "only {small_clusters} size-3 clusters recovered");
        assert!(
            modes_seen.len() >= 3,
            "size-3 targets hit modes {modes_seen:?}, expected spread over 0..1"
        );
    });
}

struct MapEmbedder {
    world: Arc<World>,
}

impl Embedder for MapEmbedder {
    fn dim(&self) -> usize {
        self.world.dim
    }

    fn embed(&self, text: &str) -> llmcal::Result<Vec<f64>> {
        Ok(self
            .world
            .embeddings
            .get(text)
            .cloned()
            .unwrap_or_else(|| hash_embedding(text, self.world.dim, 99)))
    }
}

fn metric_table(path: &Path) -> BTreeMap<String, BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut table = BTreeMap::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), header.len(), "ragged row: {line}");
        let mut row = BTreeMap::new();
        for (name, cell) in header.iter().zip(&cells).skip(1) {
            let value: f64 = cell.parse().unwrap_or_else(|_| panic!("bad cell {cell} in {line}"));
            assert!(value.is_finite());
            row.insert(name.to_string(), value);
        }
        table.insert(cells[0].to_string(), row);
    }
    table
}

#[test]
fn criterion_5_end_to_end_calibration_gain() {
    criterion(5, "synthetic end-to-end calibration gain", Some(300.0), || {
        const TOPICS: usize = 100;
        const PER: usize = 40;
        let mut rng = rng_from_seed(505);
        let difficulty: Vec<f64> = (0..TOPICS).map(|_| rng.gen_range(0.05..0.95)).collect();
        let correct: Vec<Vec<bool>> = difficulty
            .iter()
            .map(|&p| (0..PER).map(|_| rng.gen_bool(p)).collect())
            .collect();
        let jitter: Vec<Vec<f64>> = (0..TOPICS)
            .map(|_| (0..PER).map(|_| rng.gen_range(-0.004..0.004)).collect())
            .collect();

        let world = Arc::new(World::build(TOPICS, PER, 16, |t, i| {
            // Overconfident scripted likelihood: squashed into [0.70, 0.99]
            // regardless of the true per-topic accuracy.
            let conf = (0.70 + 0.29 * difficulty[t] + jitter[t][i]).clamp(0.05, 0.995);
            let logprob = conf.ln();
            Item {
                correct: correct[t][i],
                percent: String::new(),
                qualitative: String::new(),
                logprobs: vec![logprob, logprob],
            }
        }));

        let dir = TempDir::new().unwrap();
        save_corpus(dir.path().join("corpus.jsonl"), &world.corpus).unwrap();
        let mut config = base_config(dir.path());
        config.seed = 55;
        config.generate.icl_examples = 0;
        config.generate.elicit_percent = false;
        config.generate.elicit_qualitative = false;
        config.splits.train_size = Some(2200);
        config.splits.validation_size = Some(600);
        config.splits.test_size = Some(1200);
        config.train.optimizer = TrainConfig {
            hidden_size: 32,
            max_steps: 2500,
            batch_size: 64,
            ..TrainConfig::default()
        };
        config.metrics.resamples = 10;

        let client = World::record_client(&world, &dir.path().join("fixtures.jsonl"));
        let mut corpus = dir.path().join("corpus.jsonl");
        for &stage in Stage::ALL.iter().filter(|&&s| s != Stage::Report) {
            let mut stage_config = config.clone();
            stage_config.paths.corpus = corpus.clone();
            stage_config.paths.out = Some(stage_corpus(dir.path(), stage));
            let summary = run_stage_with_client(stage, &stage_config, Some(&client))
                .unwrap_or_else(|e| panic!("stage {stage} failed: {e}"));
            corpus = summary.corpus_out;
        }

        let table = metric_table(&dir.path().join("reports/metrics.csv"));
        let calibrated = &table["calibrator"];
        let baseline = &table["seq_likelihood"];
        assert!(
            calibrated["ece"] <= 0.05,
            "calibrated test ECE {:.4} above 0.05",
            calibrated["ece"]
        );
        assert!(
            calibrated["auroc"] >= 0.75,
            "calibrated AUROC {:.4} below 0.75",
            calibrated["auroc"]
        );
        assert!(
            calibrated["ece"] < baseline["ece"],
            "calibrated ECE {:.4} not below raw likelihood ECE {:.4}",
            calibrated["ece"],
            baseline["ece"]
        );

        // Same corpus, same optimizer, but per-record 0/1 targets instead of
        // cluster-accuracy targets.
        let records = load_corpus(stage_corpus(dir.path(), Stage::Targets)).unwrap();
        let of_split = |records: &[CalibrationRecord], split: Split| -> Vec<CalibrationRecord> {
            records.iter().filter(|r| r.split == Some(split)).cloned().collect()
        };
        let train = of_split(&records, Split::Train);
        let val = of_split(&records, Split::Validation);
        let test = of_split(&records, Split::Test);
        let embedder = MapEmbedder { world: Arc::clone(&world) };
        let feature_cfg = FeatureConfig::default();
        let mut optimizer = config.train.optimizer.clone();
        optimizer.seed = derive_seed(config.seed, "stage/train");
        let train_ds =
            Dataset::from_records(&train, &feature_cfg, &embedder, TargetMode::Binary).unwrap();
        let val_ds =
            Dataset::from_records(&val, &feature_cfg, &embedder, TargetMode::Binary).unwrap();
        let binary_model =
            train_calibrator(&train_ds, &val_ds, &feature_cfg, &optimizer, TargetMode::Binary)
                .unwrap();
        let mut confidences = Vec::with_capacity(test.len());
        let mut outcomes = Vec::with_capacity(test.len());
        for record in &test {
            let features =
                llmcal::calibrator::featurize_record(record, &feature_cfg, &embedder).unwrap();
            confidences.push(binary_model.predict(&features).unwrap());
            outcomes.push(record.correct.unwrap());
        }
        let binary_ece = ece_binned(&confidences, &outcomes, 10).unwrap();
        assert!(
            calibrated["ece"] <= binary_ece + 0.02,
            "cluster-target ECE {:.4} not within 0.02 of binary-target ECE {binary_ece:.4}",
            calibrated["ece"]
        );
    });
}

#[test]
fn criterion_6_baseline_fidelity() {
    criterion(6, "baseline fidelity", None, || {
        let mut rng = rng_from_seed(606);
        for trial in 0..20 {
            let n = rng.gen_range(3..60);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let outcomes: Vec<bool> = probs
                .iter()
                .map(|&p| rng.gen_bool((0.2 + 0.6 * p).clamp(0.0, 1.0)))
                .collect();
            let fitted = PlattScaler::fit(&probs, &outcomes).unwrap();
            let identity = PlattScaler { a: 1.0, b: 0.0 };
            assert!(
                fitted.mse(&probs, &outcomes) <= identity.mse(&probs, &outcomes),
                "trial {trial}: rescaling fit worse than the identity"
            );
        }

        let title_case = |phrase: &str| -> String {
            phrase
                .split(' ')
                .map(|word| {
                    let mut chars = word.chars();
                    match chars.next() {
                        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
                        None => String::new(),
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        for (phrase, value) in QUALITATIVE_SCALE {
            for cased in [phrase.to_string(), phrase.to_uppercase(), title_case(phrase)] {
                let standalone = parse_verbalized_qualitative(&cased);
                assert_eq!(standalone, Some(value), "bare phrase {cased:?}");
                let sentence = format!("I would rate this {cased}.");
                assert_eq!(
                    parse_verbalized_qualitative(&sentence),
                    Some(value),
                    "phrase {cased:?} in a sentence"
                );
            }
        }

        for v in 0..=100u32 {
            let expected = Some(f64::from(v) / 100.0);
            assert_eq!(parse_verbalized_percent(&format!("{v}%")), expected);
            assert_eq!(parse_verbalized_percent(&format!("{v} percent")), expected);
            assert_eq!(parse_verbalized_percent(&v.to_string()), expected);
        }
    });
}

#[test]
fn criterion_7_cluster_quality_protocol() {
    criterion(7, "cluster-quality separation", None, || {
        let topics = 40;
        let per_topic = 12;
        let mut questions = Vec::new();
        let mut rows = Vec::new();
        for t in 0..topics {
            for i in 0..per_topic {
                questions.push(question_text(t, i));
                rows.push(topic_embedding(16, t as u64, i as u64, 0.01));
            }
        }
        let raw = EmbeddingMatrix::from_rows(&rows).unwrap();
        let m = normalize_embeddings(&raw, Normalization::L2Row).unwrap();
        let assignment = cluster_questions(&m, 3, 3).unwrap();
        let report = evaluate_cluster_quality(&assignment, &questions, &m, 7, 200, 1000, 5).unwrap();
        assert_eq!(report.n_textual, 200);
        assert_eq!(report.n_semantic, 1000);
        assert!(
            report.semantic_mean >= report.random_semantic_mean + 0.3,
            "intra-cluster cosine {:.3} not 0.3 above the cross-cluster baseline {:.3}",
            report.semantic_mean,
            report.random_semantic_mean
        );
        assert!(
            report.textual_mean > report.random_textual_mean,
            "intra-cluster ROUGE-L {:.3} not above the cross-cluster baseline {:.3}",
            report.textual_mean,
            report.random_textual_mean
        );
    });
}

#[test]
fn criterion_8_replication_hook_on_a_user_corpus() {
    criterion(8, "metric table from a user-supplied corpus", None, || {
        let dir = TempDir::new().unwrap();
        let supplied = std::env::var_os("LLMCAL_USER_CORPUS").map(PathBuf::from);
        let corpus_path = match &supplied {
            Some(path) => path.clone(),
            None => {
                // Stand-in for real model generations: answers, token
                // logprobs, self-reports, and embeddings all present in the
                // input file, nothing scripted at runtime.
                let mut records = Vec::new();
                let mut rng = rng_from_seed(808);
                for t in 0..3usize {
                    for i in 0..30usize {
                        let question = question_text(t, i);
                        let gold = gold_text(t, i);
                        let mut record = CalibrationRecord::new(
                            format!("user-t{t}i{i}"),
                            &question,
                            vec![gold.clone()],
                        );
                        let correct = rng.gen_bool(0.3 + 0.2 * t as f64);
                        record.model_answer = Some(if correct {
                            format!("it reports {gold}")
                        } else {
                            format!("inconclusive notes {t}-{i}")
                        });
                        record.token_logprobs =
                            Some(vec![-0.1 - 0.3 * rng.gen::<f64>(), -0.05]);
                        record.verbalized_percent_raw = Some(if i % 7 == 0 {
                            "hard to say".to_string()
                        } else {
                            format!("{} %", 40 + (i % 6) * 10)
                        });
                        record.verbalized_qual_raw = Some(
                            ["low", "medium", "high"][i % 3].to_string(),
                        );
                        record.embedding = Some(topic_embedding(8, t as u64, i as u64, 0.01));
                        records.push(record);
                    }
                }
                let path = dir.path().join("user_corpus.jsonl");
                save_corpus(&path, &records).unwrap();
                path
            }
        };

        let mut config = base_config(dir.path());
        config.paths.corpus = corpus_path.clone();
        config.metrics.resamples = 10;
        let config_path = dir.path().join("config.toml");
        std::fs::write(&config_path, toml::to_string(&config).unwrap()).unwrap();

        let mut corpus = corpus_path;
        for stage in [Stage::Grade, Stage::Cluster, Stage::Targets, Stage::Evaluate] {
            let out = stage_corpus(dir.path(), stage);
            binary_stage_ok(stage, &config_path, &corpus, &out);
            corpus = out;
        }

        let text = std::fs::read_to_string(dir.path().join("reports/metrics.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,success,success_se,brier,brier_se,ece,ece_se,smece,smece_se,auroc,auroc_se"
        );
        let table = metric_table(&dir.path().join("reports/metrics.csv"));
        assert!(!table.is_empty(), "no method rows emitted");
        if supplied.is_none() {
            for method in ["seq_likelihood", "verbalized_percent", "verbalized_qualitative"] {
                assert!(table.contains_key(method), "missing row for {method}");
            }
        }
    });
}

#[test]
fn criterion_9_pipeline_determinism() {
    criterion(9, "byte-identical artifacts across reruns", None, || {
        let record_dir = TempDir::new().unwrap();
        let world = Arc::new(World::build(4, 12, 8, trivia_item));
        record_fixtures(record_dir.path(), &world);

        let mut dirs = Vec::new();
        for _ in 0..2 {
            let dir = TempDir::new().unwrap();
            for name in ["corpus.jsonl", "fixtures.jsonl"] {
                std::fs::copy(record_dir.path().join(name), dir.path().join(name)).unwrap();
            }
            let config = base_config(dir.path());
            binary_replay_chain(dir.path(), &config);
            dirs.push(dir);
        }

        for artifact in CHAIN_ARTIFACTS {
            let first = read_bytes(&dirs[0].path().join(artifact));
            let second = read_bytes(&dirs[1].path().join(artifact));
            assert_eq!(first, second, "replay runs diverge on {artifact}");
        }
    });
}
