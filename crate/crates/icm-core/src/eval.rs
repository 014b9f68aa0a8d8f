//! Accuracy against gold labels, UDHR bias failure rates, and the
//! zero-shot / many-shot baseline modes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Dataset, Example, LabelAssignment, Provenance};
use crate::scorer::{argmax_label, score_distribution, ScoreError, ScorerBackend, ScoringContext};

#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    MissingGold(Vec<String>),
    MissingPrediction(Vec<String>),
    /// UDHR metadata (framing / category / expected label) absent.
    MissingMetadata { id: String, key: String },
    ConfigInvalid(String),
    DemoOverlap(Vec<String>),
    Score(ScoreError),
}

impl core::fmt::Display for EvalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvalError::MissingGold(ids) => write!(f, "examples missing gold labels: {ids:?}"),
            EvalError::MissingPrediction(ids) => write!(f, "examples missing predictions: {ids:?}"),
            EvalError::MissingMetadata { id, key } => write!(f, "example {id} missing metadata {key:?}"),
            EvalError::ConfigInvalid(msg) => write!(f, "invalid evaluation config: {msg}"),
            EvalError::DemoOverlap(ids) => write!(f, "demonstrations overlap evaluation set: {ids:?}"),
            EvalError::Score(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<ScoreError> for EvalError {
    fn from(e: ScoreError) -> Self {
        EvalError::Score(e)
    }
}

/// Correct/total pair; `rate` is the exact ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub correct: usize,
    pub total: usize,
}

impl AccuracyCell {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Fraction of examples whose prediction equals the gold label.
pub fn accuracy(dataset: &Dataset, predictions: &LabelAssignment) -> Result<AccuracyCell, EvalError> {
    let missing_gold: Vec<String> =
        dataset.examples.iter().filter(|e| e.gold_label.is_none()).map(|e| e.id.clone()).collect();
    if !missing_gold.is_empty() {
        return Err(EvalError::MissingGold(missing_gold));
    }
    let missing_pred: Vec<String> =
        dataset.examples.iter().filter(|e| !predictions.contains(&e.id)).map(|e| e.id.clone()).collect();
    if !missing_pred.is_empty() {
        return Err(EvalError::MissingPrediction(missing_pred));
    }
    let correct = dataset
        .examples
        .iter()
        .filter(|e| predictions.get(&e.id) == e.gold_label)
        .count();
    Ok(AccuracyCell { correct, total: dataset.len() })
}

/// Accuracy split by the examples' `subtask` (falling back to `source`)
/// metadata, plus the overall cell.
pub fn accuracy_by_task(
    dataset: &Dataset,
    predictions: &LabelAssignment,
) -> Result<BTreeMap<String, AccuracyCell>, EvalError> {
    accuracy(dataset, predictions)?; // surfaces missing gold/prediction ids
    let mut per_task: BTreeMap<String, AccuracyCell> = BTreeMap::new();
    for example in &dataset.examples {
        let task = example
            .metadata
            .get("subtask")
            .or_else(|| example.metadata.get("source"))
            .cloned()
            .unwrap_or_else(|| dataset.name.clone());
        let cell = per_task.entry(task).or_insert(AccuracyCell { correct: 0, total: 0 });
        cell.total += 1;
        if predictions.get(&example.id) == example.gold_label {
            cell.correct += 1;
        }
    }
    Ok(per_task)
}

/// Failures/total pair for one (category, framing) cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub failures: usize,
    pub total: usize,
}

impl BiasCell {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.failures as f64 / self.total as f64
        }
    }
}

/// Bias failure counts per (category, framing) and overall per framing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// (category, framing) → cell; keys sorted for stable output.
    pub per_category: Vec<BiasRow>,
    pub per_framing: Vec<FramingRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub category: String,
    pub framing: String,
    pub failures: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramingRow {
    pub framing: String,
    pub failures: usize,
    pub total: usize,
    pub rate: f64,
}

impl BiasReport {
    pub fn cell(&self, category: &str, framing: &str) -> Option<&BiasRow> {
        self.per_category.iter().find(|r| r.category == category && r.framing == framing)
    }

    pub fn framing(&self, framing: &str) -> Option<&FramingRow> {
        self.per_framing.iter().find(|r| r.framing == framing)
    }
}

/// A failure is a prediction that differs from the rights-affirming
/// expected label; aggregated by identity category and framing.
pub fn bias_failure_rates(
    udhr_dataset: &Dataset,
    predictions: &LabelAssignment,
) -> Result<BiasReport, EvalError> {
    let mut per: BTreeMap<(String, String), BiasCell> = BTreeMap::new();
    let mut overall: BTreeMap<String, BiasCell> = BTreeMap::new();
    for example in &udhr_dataset.examples {
        let meta = |key: &str| -> Result<&String, EvalError> {
            example.metadata.get(key).ok_or_else(|| EvalError::MissingMetadata {
                id: example.id.clone(),
                key: key.to_string(),
            })
        };
        let category = meta("category")?.clone();
        let framing = meta("framing")?.clone();
        let expected = expected_label_index(example, meta("expected_affirming_label")?)?;
        let Some(predicted) = predictions.get(&example.id) else {
            return Err(EvalError::MissingPrediction(alloc::vec![example.id.clone()]));
        };
        let failed = predicted != expected;
        let cell = per.entry((category, framing.clone())).or_insert(BiasCell { failures: 0, total: 0 });
        cell.total += 1;
        let total_cell = overall.entry(framing).or_insert(BiasCell { failures: 0, total: 0 });
        total_cell.total += 1;
        if failed {
            cell.failures += 1;
            total_cell.failures += 1;
        }
    }
    Ok(BiasReport {
        per_category: per
            .into_iter()
            .map(|((category, framing), c)| BiasRow {
                category,
                framing,
                failures: c.failures,
                total: c.total,
                rate: c.rate(),
            })
            .collect(),
        per_framing: overall
            .into_iter()
            .map(|(framing, c)| FramingRow { framing, failures: c.failures, total: c.total, rate: c.rate() })
            .collect(),
    })
}

fn expected_label_index(example: &Example, value: &str) -> Result<usize, EvalError> {
    example
        .candidate_labels
        .iter()
        .position(|l| l == value)
        .ok_or_else(|| EvalError::MissingMetadata {
            id: example.id.clone(),
            key: String::from("expected_affirming_label"),
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    ZeroShot,
    ManyShot,
}

/// Runs a prompting baseline over the dataset and returns its predictions.
///
/// Zero-shot scores every example with an empty demonstration context,
/// optionally under an instruction prefix. Many-shot conditions on `shots`
/// gold-labeled demonstrations sampled (seeded) from `demo_pool`, which must
/// be disjoint from the evaluation set.
pub fn run_baseline<B: ScorerBackend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    mode: BaselineMode,
    shots: usize,
    demo_pool: Option<&Dataset>,
    instruction: Option<&str>,
    seed: u64,
) -> Result<LabelAssignment, EvalError> {
    let demos: Vec<(&Example, usize)> = match mode {
        BaselineMode::ZeroShot => Vec::new(),
        BaselineMode::ManyShot => {
            if shots == 0 {
                return Err(EvalError::ConfigInvalid(String::from("many_shot requires shots >= 1")));
            }
            let pool = demo_pool
                .ok_or_else(|| EvalError::ConfigInvalid(String::from("many_shot requires a demonstration pool")))?;
            let eval_ids: BTreeSet<&str> = dataset.examples.iter().map(|e| e.id.as_str()).collect();
            let overlap: Vec<String> = pool
                .examples
                .iter()
                .filter(|e| eval_ids.contains(e.id.as_str()))
                .map(|e| e.id.clone())
                .collect();
            if !overlap.is_empty() {
                return Err(EvalError::DemoOverlap(overlap));
            }
            let missing_gold: Vec<String> =
                pool.examples.iter().filter(|e| e.gold_label.is_none()).map(|e| e.id.clone()).collect();
            if !missing_gold.is_empty() {
                return Err(EvalError::MissingGold(missing_gold));
            }
            if pool.len() < shots {
                return Err(EvalError::ConfigInvalid(alloc::format!(
                    "demonstration pool of {} smaller than shots {shots}",
                    pool.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen = rand::seq::index::sample(&mut rng, pool.len(), shots).into_vec();
            chosen.sort_unstable();
            chosen
                .into_iter()
                .map(|i| {
                    let e = &pool.examples[i];
                    (e, e.gold_label.expect("checked above"))
                })
                .collect()
        }
    };
    let context = ScoringContext { entries: demos };

    let mut predictions = LabelAssignment::new();
    for example in &dataset.examples {
        let probs = match instruction {
            None => score_distribution(backend, example, &context)?,
            Some(prefix) => {
                let mut prefixed = example.clone();
                prefixed.prompt_text = alloc::format!("{prefix}\n\n{}", example.prompt_text);
                score_distribution(backend, &prefixed, &context)?
            }
        };
        predictions.set(example.id.clone(), argmax_label(&probs), Provenance::Baseline);
    }
    Ok(predictions)
}

/// Evaluation mode tag carried on reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    IcmLabels,
    ZeroShotBase,
    ZeroShotChat,
    ManyShot,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::IcmLabels => "icm_labels",
            EvalMode::ZeroShotBase => "zero_shot_base",
            EvalMode::ZeroShotChat => "zero_shot_chat",
            EvalMode::ManyShot => "many_shot",
        }
    }
}

/// Accuracy plus bias failure rates with the run's identifying metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: EvalMode,
    pub backend: String,
    pub config_echo: String,
    pub per_task_accuracy: BTreeMap<String, AccuracyCell>,
    pub bias: Option<BiasReport>,
}
