//! Shared domain types: examples, datasets, label assignments, constraints,
//! and the annealing objective breakdown.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

/// Classification shape of an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    YesNo,
    ClaimVerification,
    PairwisePreference,
}

/// A single claim-verification item in the unified schema.
///
/// `prompt_text` is the fully rendered query ending in the label slot;
/// `candidate_labels` is the fixed answer set, "True"/"False" by default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub task_kind: TaskKind,
    pub prompt_text: String,
    pub claim_text: String,
    pub candidate_labels: Vec<String>,
    pub gold_label: Option<usize>,
    pub group_id: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Example {
    /// Two-label example with the default "True"/"False" candidates.
    pub fn new(id: impl Into<String>, task_kind: TaskKind, prompt_text: impl Into<String>, claim_text: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            task_kind,
            prompt_text: prompt_text.into(),
            claim_text: claim_text.into(),
            candidate_labels: default_labels(),
            gold_label: None,
            group_id: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn label_count(&self) -> usize {
        self.candidate_labels.len()
    }
}

pub fn default_labels() -> Vec<String> {
    vec![String::from("True"), String::from("False")]
}

/// Index of the "True" label in the default candidate set.
pub const TRUE_LABEL: usize = 0;
/// Index of the "False" label in the default candidate set.
pub const FALSE_LABEL: usize = 1;

/// How a label entered an assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SeedRandom,
    Search,
    Fixed,
    Pseudo,
    Gold,
    Baseline,
}

/// A partial or total map from example id to chosen label index.
///
/// The key sets of `labels` and `provenance` are kept identical by the
/// mutation API.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    labels: BTreeMap<String, usize>,
    provenance: BTreeMap<String, Provenance>,
}

impl LabelAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, id: impl Into<String>, label: usize, provenance: Provenance) {
        let id = id.into();
        self.labels.insert(id.clone(), label);
        self.provenance.insert(id, provenance);
    }

    pub fn remove(&mut self, id: &str) {
        self.labels.remove(id);
        self.provenance.remove(id);
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.labels.get(id).copied()
    }

    pub fn provenance(&self, id: &str) -> Option<Provenance> {
        self.provenance.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.labels.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labeled (id, label) pairs in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.labels.iter().map(|(id, &l)| (id.as_str(), l))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }
}

/// Kind of logical relation a constraint encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Two logically negated statements must take opposite labels.
    PairFlip,
    /// "A over B" and "B over A" cannot both be affirmed.
    Asymmetry,
    Custom,
}

/// A relation over a small set of examples with explicit forbidden label
/// combinations, one index per member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConstraint {
    pub kind: ConstraintKind,
    pub member_ids: Vec<String>,
    pub forbidden: BTreeSet<Vec<usize>>,
}

impl ConsistencyConstraint {
    pub fn pair_flip(a: impl Into<String>, b: impl Into<String>) -> Self {
        ConsistencyConstraint {
            kind: ConstraintKind::PairFlip,
            member_ids: vec![a.into(), b.into()],
            forbidden: [vec![TRUE_LABEL, TRUE_LABEL], vec![FALSE_LABEL, FALSE_LABEL]].into_iter().collect(),
        }
    }

    pub fn asymmetry(a: impl Into<String>, b: impl Into<String>) -> Self {
        ConsistencyConstraint {
            kind: ConstraintKind::Asymmetry,
            member_ids: vec![a.into(), b.into()],
            forbidden: [vec![TRUE_LABEL, TRUE_LABEL]].into_iter().collect(),
        }
    }
}

/// A named collection of examples with their derived constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    #[serde(default)]
    pub constraints: Vec<ConsistencyConstraint>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Self {
        Dataset { name: name.into(), examples, constraints: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Position of an example by id, scanning in dataset order.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.examples.iter().position(|e| e.id == id)
    }

    pub fn example(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// id → position map for repeated lookups.
    pub fn id_index(&self) -> BTreeMap<&str, usize> {
        self.examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect()
    }
}

/// The annealing objective: `total = alpha * mutual_predictability - inconsistency_count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub mutual_predictability: f64,
    pub inconsistency_count: usize,
    pub alpha: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn new(mutual_predictability: f64, inconsistency_count: usize, alpha: f64) -> Self {
        ScoreBreakdown {
            mutual_predictability,
            inconsistency_count,
            alpha,
            total: alpha * mutual_predictability - inconsistency_count as f64,
        }
    }

    /// Recompute `total` from the stored components.
    pub fn recomputed_total(&self) -> f64 {
        self.alpha * self.mutual_predictability - self.inconsistency_count as f64
    }
}

/// Parameters of the annealing search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealingConfig {
    /// Number of randomly labeled examples the search starts from.
    pub seed_count: usize,
    pub initial_temperature: f64,
    pub final_temperature: f64,
    /// Geometric cooling factor in (0, 1].
    pub cooling_rate: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    /// Weight of mutual predictability against the inconsistency count.
    pub alpha: f64,
    /// Max number of in-context labeled examples per scoring call.
    pub context_budget: usize,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        AnnealingConfig {
            seed_count: 8,
            initial_temperature: 2.0,
            final_temperature: 0.01,
            cooling_rate: 0.99,
            max_iterations: 1000,
            rng_seed: 0,
            alpha: 50.0,
            context_budget: 32,
        }
    }
}

impl AnnealingConfig {
    /// Configuration-level sanity checks, independent of any dataset.
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_temperature <= 0.0 || self.final_temperature <= 0.0 {
            return Err(String::from("temperatures must be positive"));
        }
        if self.final_temperature > self.initial_temperature {
            return Err(String::from("final_temperature must not exceed initial_temperature"));
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate <= 1.0) {
            return Err(String::from("cooling_rate must lie in (0, 1]"));
        }
        if self.alpha <= 0.0 {
            return Err(String::from("alpha must be positive"));
        }
        Ok(())
    }
}

/// A single dataset-invariant violation, naming the offending id or field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending example id, constraint member id, or field name.
    pub subject: String,
    pub message: String,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Checks every dataset invariant and returns one entry per breach.
///
/// An empty result means the dataset is well formed.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for example in &dataset.examples {
        if !seen.insert(&example.id) {
            violations.push(Violation {
                subject: example.id.clone(),
                message: String::from("duplicate example id"),
            });
        }
        let distinct: BTreeSet<&str> = example.candidate_labels.iter().map(String::as_str).collect();
        if distinct.len() < 2 {
            violations.push(Violation {
                subject: example.id.clone(),
                message: String::from("candidate_labels must contain at least 2 distinct entries"),
            });
        }
        if let Some(gold) = example.gold_label {
            if gold >= example.candidate_labels.len() {
                violations.push(Violation {
                    subject: example.id.clone(),
                    message: format!("gold_label {gold} out of range for {} candidates", example.candidate_labels.len()),
                });
            }
        }
    }
    let index = dataset.id_index();
    for (ci, constraint) in dataset.constraints.iter().enumerate() {
        if constraint.member_ids.len() < 2 {
            violations.push(Violation {
                subject: format!("constraint[{ci}]"),
                message: String::from("constraint needs at least 2 members"),
            });
        }
        let mut member_sizes = Vec::with_capacity(constraint.member_ids.len());
        for id in &constraint.member_ids {
            match index.get(id.as_str()) {
                Some(&i) => member_sizes.push(Some(dataset.examples[i].label_count())),
                None => {
                    violations.push(Violation {
                        subject: id.clone(),
                        message: format!("constraint[{ci}] references unknown example id"),
                    });
                    member_sizes.push(None);
                }
            }
        }
        for tuple in &constraint.forbidden {
            if tuple.len() != constraint.member_ids.len() {
                violations.push(Violation {
                    subject: format!("constraint[{ci}]"),
                    message: format!("forbidden tuple length {} does not match {} members", tuple.len(), constraint.member_ids.len()),
                });
                continue;
            }
            for (pos, (&label, size)) in tuple.iter().zip(&member_sizes).enumerate() {
                if let Some(size) = size {
                    if label >= *size {
                        violations.push(Violation {
                            subject: constraint.member_ids[pos].clone(),
                            message: format!("constraint[{ci}] forbidden label index {label} out of range"),
                        });
                    }
                }
            }
        }
        // Satisfiability: some tuple over the label product must be allowed.
        if member_sizes.iter().all(Option::is_some) {
            let sizes: Vec<usize> = member_sizes.iter().map(|s| s.unwrap()).collect();
            let product: usize = sizes.iter().product();
            if constraint.forbidden.iter().filter(|t| t.len() == sizes.len()).count() >= product {
                let allowed = label_tuples(&sizes).any(|t| !constraint.forbidden.contains(&t));
                if !allowed {
                    violations.push(Violation {
                        subject: format!("constraint[{ci}]"),
                        message: String::from("constraint forbids every label combination"),
                    });
                }
            }
        }
    }
    // Assignment-free check: nothing else to verify here.
    violations
}

/// Iterates every label tuple over the given per-member label counts, in
/// lexicographic order.
pub fn label_tuples(sizes: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = sizes.iter().product();
    let sizes = sizes.to_vec();
    (0..if sizes.is_empty() { 0 } else { total }).map(move |mut n| {
        let mut tuple = vec![0usize; sizes.len()];
        for pos in (0..sizes.len()).rev() {
            tuple[pos] = n % sizes[pos];
            n /= sizes[pos];
        }
        tuple
    })
}
