//! The seed -> pseudo-label -> fine-tune-export scale-up path: an ICM-labeled
//! seed set conditions the scorer to label the remainder, and the combined
//! labels are exported as completion training data.

use std::path::Path;

use icm_core::model::{Dataset, LabelAssignment, Provenance};
use icm_core::scorer::{argmax_label, score_distribution, ScorerBackend, ScoringContext};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::formats::{atomic_write, sha256_hex, FormatError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pseudo-labeling requires a non-empty seed assignment")]
    EmptySeed,
    #[error("seed assignment references unknown example {0}")]
    UnknownSeedId(String),
    #[error("assignment leaves {count} examples unlabeled: {}{}", ids.join(", "), if *count > ids.len() { ", ..." } else { "" })]
    PartialAssignment { count: usize, ids: Vec<String> },
    #[error(transparent)]
    Score(#[from] icm_core::scorer::ScoreError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Labels every example outside the seed set with the argmax label under a
/// seeded demonstration context drawn from the seed set.
///
/// Seed labels are never modified; new labels carry pseudo provenance.
/// `demo_pool_size = 0` degenerates to zero-shot labeling of the remainder.
pub fn pseudo_label<B: ScorerBackend + ?Sized>(
    dataset: &Dataset,
    seed_assignment: &LabelAssignment,
    backend: &B,
    demo_pool_size: usize,
    seed: u64,
) -> Result<LabelAssignment, PipelineError> {
    if seed_assignment.is_empty() {
        return Err(PipelineError::EmptySeed);
    }
    let mut seed_examples = Vec::with_capacity(seed_assignment.len());
    for (id, label) in seed_assignment.iter() {
        let example = dataset.example(id).ok_or_else(|| PipelineError::UnknownSeedId(id.to_owned()))?;
        seed_examples.push((example, label));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = seed_assignment.clone();
    for example in &dataset.examples {
        if seed_assignment.contains(&example.id) {
            continue;
        }
        let shots = demo_pool_size.min(seed_examples.len());
        let mut chosen = rand::seq::index::sample(&mut rng, seed_examples.len(), shots).into_vec();
        chosen.sort_unstable();
        let context = ScoringContext { entries: chosen.into_iter().map(|i| seed_examples[i]).collect() };
        let probs = score_distribution(backend, example, &context)
            .map_err(|e| e.for_example(&example.id))?;
        result.set(example.id.clone(), argmax_label(&probs), Provenance::Pseudo);
    }
    Ok(result)
}

/// One fine-tuning record: the rendered prompt and the assigned label as
/// the completion (leading space included, matching the label slot).
#[derive(Serialize)]
struct FinetuneRecord<'a> {
    prompt: &'a str,
    completion: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportSummary {
    pub records: usize,
    pub sha256: String,
}

/// Renders the fine-tuning export payload, one JSON line per example in
/// dataset order. Byte-stable for identical inputs.
pub fn finetune_jsonl(dataset: &Dataset, assignment: &LabelAssignment) -> Result<String, PipelineError> {
    let unlabeled: Vec<String> =
        dataset.examples.iter().filter(|e| !assignment.contains(&e.id)).map(|e| e.id.clone()).collect();
    if !unlabeled.is_empty() {
        let count = unlabeled.len();
        return Err(PipelineError::PartialAssignment {
            count,
            ids: unlabeled.into_iter().take(8).collect(),
        });
    }
    let mut out = String::new();
    for example in &dataset.examples {
        let label = assignment.get(&example.id).expect("checked above");
        let record = FinetuneRecord {
            prompt: &example.prompt_text,
            completion: format!(" {}", example.candidate_labels[label]),
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    Ok(out)
}

/// Writes the export atomically and returns its record count and content
/// checksum.
pub fn export_finetune(
    dataset: &Dataset,
    assignment: &LabelAssignment,
    path: &Path,
) -> Result<ExportSummary, PipelineError> {
    let payload = finetune_jsonl(dataset, assignment)?;
    atomic_write(path, payload.as_bytes())?;
    Ok(ExportSummary { records: dataset.len(), sha256: sha256_hex(payload.as_bytes()) })
}
