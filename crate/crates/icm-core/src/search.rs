//! The ICM outer loop: seeded random initialization, label proposals with
//! inconsistency repair, and Metropolis acceptance under geometric cooling.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{count_violations, evaluate_assignment, fix_inconsistencies, FixError};
use crate::model::{AnnealingConfig, Dataset, LabelAssignment, Provenance, ScoreBreakdown};
use crate::scorer::{argmax_label, build_context, score_distribution, ScorerBackend};

/// One proposal step as recorded in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub temperature: f64,
    pub proposed_id: String,
    pub before: ScoreBreakdown,
    pub after: ScoreBreakdown,
    pub accepted: bool,
}

/// Full observable history of one search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<IterationRecord>,
    pub final_assignment: LabelAssignment,
    pub final_score: ScoreBreakdown,
}

#[derive(Debug)]
pub enum SearchError {
    ConfigInvalid(String),
    /// Backend failure mid-run; carries the trace up to the failure.
    Aborted { partial: Box<SearchTrace>, source: FixError },
}

impl core::fmt::Display for SearchError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SearchError::ConfigInvalid(msg) => write!(f, "invalid search config: {msg}"),
            SearchError::Aborted { source, .. } => write!(f, "search aborted: {source}"),
        }
    }
}

impl core::error::Error for SearchError {}

/// Seeds the search: `seed_count` examples drawn uniformly without
/// replacement, each given a uniformly random label.
pub fn initialize(dataset: &Dataset, config: &AnnealingConfig) -> Result<LabelAssignment, SearchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    initialize_with(dataset, config, &mut rng)
}

fn initialize_with(
    dataset: &Dataset,
    config: &AnnealingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LabelAssignment, SearchError> {
    if config.seed_count > dataset.len() {
        return Err(SearchError::ConfigInvalid(alloc::format!(
            "seed_count {} exceeds dataset size {}",
            config.seed_count,
            dataset.len()
        )));
    }
    let chosen = rand::seq::index::sample(rng, dataset.len(), config.seed_count);
    let mut sorted: Vec<usize> = chosen.into_vec();
    sorted.sort_unstable();
    let mut assignment = LabelAssignment::new();
    for i in sorted {
        let example = &dataset.examples[i];
        let label = rng.gen_range(0..example.label_count());
        assignment.set(example.id.clone(), label, Provenance::SeedRandom);
    }
    Ok(assignment)
}

/// Geometric schedule with a floor:
/// `T(n) = max(final_temperature, initial_temperature * cooling_rate^n)`.
pub fn temperature(iteration: usize, config: &AnnealingConfig) -> f64 {
    let decayed = config.initial_temperature * libm::pow(config.cooling_rate, iteration as f64);
    if decayed < config.final_temperature {
        config.final_temperature
    } else {
        decayed
    }
}

/// Metropolis rule: improving moves always accepted, worsening moves with
/// probability `exp(delta / T)`.
pub fn accept<R: Rng>(delta_total: f64, temperature: f64, rng: &mut R) -> bool {
    if delta_total > 0.0 {
        return true;
    }
    rng.gen::<f64>() < libm::exp(delta_total / temperature)
}

/// Proposes a label for a uniformly chosen example (labeled or not), argmax
/// under the current context, then repairs any violated constraint that
/// involves it. Returns the candidate and its full score.
pub fn propose<B: ScorerBackend + ?Sized>(
    dataset: &Dataset,
    assignment: &LabelAssignment,
    backend: &B,
    config: &AnnealingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelAssignment, ScoreBreakdown), FixError> {
    let idx = rng.gen_range(0..dataset.len());
    let target = &dataset.examples[idx];
    let mut candidate = assignment.clone();
    candidate.remove(&target.id);
    // Fresh subsample seed per proposal so over-budget contexts vary
    // across iterations while the run stays reproducible.
    let context_seed = rng.gen::<u64>();
    let context = build_context(dataset, &candidate, &target.id, config.context_budget, context_seed);
    let probs = score_distribution(backend, target, &context)?;
    candidate.set(target.id.clone(), argmax_label(&probs), Provenance::Search);
    repair_involving(dataset, &mut candidate, &target.id, backend, config)?;
    let score = evaluate_assignment(backend, dataset, &candidate, config.alpha, config.context_budget, config.rng_seed)?;
    Ok((candidate, score))
}

/// Repeatedly fixes violated constraints that involve `id` until none remain.
/// Bounded by a pass budget; each fix resolves its own constraint, so the
/// loop terminates in practice after one or two passes.
fn repair_involving<B: ScorerBackend + ?Sized>(
    dataset: &Dataset,
    assignment: &mut LabelAssignment,
    id: &str,
    backend: &B,
    config: &AnnealingConfig,
) -> Result<(), FixError> {
    let involving: Vec<usize> = dataset
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.member_ids.iter().any(|m| m == id))
        .map(|(i, _)| i)
        .collect();
    if involving.is_empty() {
        return Ok(());
    }
    let max_passes = 2 + involving.len() * 2;
    for _ in 0..max_passes {
        let violations = count_violations(dataset, assignment);
        let next = violations.items.iter().map(|(ci, _)| *ci).find(|ci| involving.contains(ci));
        match next {
            None => return Ok(()),
            Some(ci) => {
                *assignment = fix_inconsistencies(
                    dataset,
                    assignment,
                    &dataset.constraints[ci],
                    backend,
                    config.alpha,
                    config.context_budget,
                    config.rng_seed,
                )?;
            }
        }
    }
    Ok(())
}

/// Runs the full annealing search and returns its trace.
///
/// After the schedule finishes, a final sweep labels any still-unlabeled
/// example by scorer argmax plus repair so the assignment is total.
pub fn run_icm<B: ScorerBackend + ?Sized>(
    dataset: &Dataset,
    backend: &B,
    config: &AnnealingConfig,
) -> Result<SearchTrace, SearchError> {
    config.validate().map_err(SearchError::ConfigInvalid)?;
    if dataset.is_empty() {
        return Err(SearchError::ConfigInvalid(String::from("dataset is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut current = initialize_with(dataset, config, &mut rng)?;

    let abort = |records: Vec<IterationRecord>, assignment: LabelAssignment, score: ScoreBreakdown, source: FixError| {
        SearchError::Aborted {
            partial: Box::new(SearchTrace { records, final_assignment: assignment, final_score: score }),
            source,
        }
    };

    let mut current_score =
        match evaluate_assignment(backend, dataset, &current, config.alpha, config.context_budget, config.rng_seed) {
            Ok(s) => s,
            Err(e) => {
                let zero = ScoreBreakdown::new(0.0, 0, config.alpha);
                return Err(abort(Vec::new(), current, zero, e.into()));
            }
        };

    let mut records = Vec::with_capacity(config.max_iterations);
    for iteration in 0..config.max_iterations {
        let t = temperature(iteration, config);
        let (candidate, candidate_score) = match propose(dataset, &current, backend, config, &mut rng) {
            Ok(ok) => ok,
            Err(e) => return Err(abort(records, current, current_score, e)),
        };
        let delta = candidate_score.total - current_score.total;
        let accepted = accept(delta, t, &mut rng);
        records.push(IterationRecord {
            iteration,
            temperature: t,
            proposed_id: candidate_proposed_id(&candidate, &current),
            before: current_score,
            after: candidate_score,
            accepted,
        });
        if accepted {
            current = candidate;
            current_score = candidate_score;
        }
    }

    // Final sweep: label everything the schedule never reached.
    for i in 0..dataset.len() {
        let target = &dataset.examples[i];
        if current.contains(&target.id) {
            continue;
        }
        let context = build_context(dataset, &current, &target.id, config.context_budget, config.rng_seed);
        match score_distribution(backend, target, &context) {
            Ok(probs) => current.set(target.id.clone(), argmax_label(&probs), Provenance::Search),
            Err(e) => return Err(abort(records, current, current_score, e.into())),
        }
        if let Err(e) = repair_involving(dataset, &mut current, &target.id, backend, config) {
            return Err(abort(records, current, current_score, e));
        }
    }

    let final_score =
        match evaluate_assignment(backend, dataset, &current, config.alpha, config.context_budget, config.rng_seed) {
            Ok(s) => s,
            Err(e) => return Err(abort(records, current, current_score, e.into())),
        };
    Ok(SearchTrace { records, final_assignment: current, final_score })
}

/// The id whose label differs between candidate and current, falling back to
/// the first labeled id (proposal may re-assert an identical label).
fn candidate_proposed_id(candidate: &LabelAssignment, current: &LabelAssignment) -> String {
    for (id, label) in candidate.iter() {
        if current.get(id) != Some(label) {
            return String::from(id);
        }
    }
    candidate.ids().next().map(String::from).unwrap_or_default()
}
