//! Constraint derivation, violation counting, and the enumerate-and-argmax
//! fix routine for contradictory label assignments.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::format;

use crate::model::{
    label_tuples, ConsistencyConstraint, Dataset, LabelAssignment, Provenance, ScoreBreakdown, TaskKind,
};
use crate::scorer::{mutual_predictability, ScoreError, ScorerBackend};

/// The violated constraints of an assignment, one item per constraint whose
/// members' labels form a forbidden tuple.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViolationReport {
    /// (constraint index in the dataset, offending label tuple) pairs.
    pub items: Vec<(usize, Vec<usize>)>,
}

impl ViolationReport {
    pub fn count(&self) -> usize {
        self.items.len()
    }

    pub fn is_consistent(&self) -> bool {
        self.items.is_empty()
    }
}

/// Constraints plus warnings for groups the rules cannot handle.
#[derive(Clone, Debug, Default)]
pub struct DerivedConstraints {
    pub constraints: Vec<ConsistencyConstraint>,
    pub warnings: Vec<String>,
}

/// Derives constraints from group structure: two paired yes/no or
/// claim-verification examples become a pair-flip (opposite labels); two
/// paired pairwise-preference examples become an asymmetry (not both True).
/// Groups of any other size or mixed task kind yield a warning instead.
pub fn derive_constraints(dataset: &Dataset) -> DerivedConstraints {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, example) in dataset.examples.iter().enumerate() {
        if let Some(group) = &example.group_id {
            groups.entry(group).or_default().push(i);
        }
    }
    let mut out = DerivedConstraints::default();
    for (group, members) in groups {
        if members.len() != 2 {
            out.warnings.push(format!("group {group} has {} members; expected 2, no constraint derived", members.len()));
            continue;
        }
        let (a, b) = (&dataset.examples[members[0]], &dataset.examples[members[1]]);
        let flip_kind = |k: TaskKind| matches!(k, TaskKind::YesNo | TaskKind::ClaimVerification);
        if flip_kind(a.task_kind) && flip_kind(b.task_kind) {
            out.constraints.push(ConsistencyConstraint::pair_flip(&a.id, &b.id));
        } else if a.task_kind == TaskKind::PairwisePreference && b.task_kind == TaskKind::PairwisePreference {
            out.constraints.push(ConsistencyConstraint::asymmetry(&a.id, &b.id));
        } else {
            out.warnings.push(format!("group {group} mixes task kinds; no constraint derived"));
        }
    }
    out
}

/// Counts constraints whose members are all labeled with a forbidden tuple;
/// partially labeled constraints contribute nothing.
pub fn count_violations(dataset: &Dataset, assignment: &LabelAssignment) -> ViolationReport {
    let mut report = ViolationReport::default();
    for (ci, constraint) in dataset.constraints.iter().enumerate() {
        if let Some(tuple) = member_tuple(constraint, assignment) {
            if constraint.forbidden.contains(&tuple) {
                report.items.push((ci, tuple));
            }
        }
    }
    report
}

/// The members' label tuple, or None when any member is unlabeled.
fn member_tuple(constraint: &ConsistencyConstraint, assignment: &LabelAssignment) -> Option<Vec<usize>> {
    constraint.member_ids.iter().map(|id| assignment.get(id)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixError {
    /// Every label combination over the members is forbidden.
    Unsatisfiable,
    UnknownMember(String),
    Score(ScoreError),
}

impl core::fmt::Display for FixError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FixError::Unsatisfiable => write!(f, "constraint forbids every label combination"),
            FixError::UnknownMember(id) => write!(f, "constraint member {id} not in dataset"),
            FixError::Score(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for FixError {}

impl From<ScoreError> for FixError {
    fn from(e: ScoreError) -> Self {
        FixError::Score(e)
    }
}

/// Full objective for an assignment: weighted mutual predictability minus
/// the inconsistency count.
pub fn evaluate_assignment<B: ScorerBackend + ?Sized>(
    backend: &B,
    dataset: &Dataset,
    assignment: &LabelAssignment,
    alpha: f64,
    context_budget: usize,
    rng_seed: u64,
) -> Result<ScoreBreakdown, ScoreError> {
    let mp = mutual_predictability(backend, dataset, assignment, context_budget, rng_seed)?;
    let violations = count_violations(dataset, assignment);
    Ok(ScoreBreakdown::new(mp, violations.count(), alpha))
}

/// Repairs one violated constraint: enumerates every permitted label tuple
/// over its members (other labels held fixed), evaluates the full objective
/// for each, and keeps the best, breaking ties toward the lexicographically
/// smallest tuple. An assignment that does not violate the constraint is
/// returned unchanged.
#[allow(clippy::too_many_arguments)]
pub fn fix_inconsistencies<B: ScorerBackend + ?Sized>(
    dataset: &Dataset,
    assignment: &LabelAssignment,
    violated: &ConsistencyConstraint,
    backend: &B,
    alpha: f64,
    context_budget: usize,
    rng_seed: u64,
) -> Result<LabelAssignment, FixError> {
    match member_tuple(violated, assignment) {
        Some(tuple) if violated.forbidden.contains(&tuple) => {}
        // Consistent or partially labeled: nothing to repair.
        _ => return Ok(assignment.clone()),
    }

    let mut sizes = Vec::with_capacity(violated.member_ids.len());
    for id in &violated.member_ids {
        let example = dataset.example(id).ok_or_else(|| FixError::UnknownMember(id.clone()))?;
        sizes.push(example.label_count());
    }

    let mut best: Option<(LabelAssignment, f64)> = None;
    for tuple in label_tuples(&sizes) {
        if violated.forbidden.contains(&tuple) {
            continue;
        }
        let mut candidate = assignment.clone();
        for (id, &label) in violated.member_ids.iter().zip(&tuple) {
            candidate.set(id.clone(), label, Provenance::Fixed);
        }
        let score = evaluate_assignment(backend, dataset, &candidate, alpha, context_budget, rng_seed)?;
        // Strictly-greater keeps the first (lexicographically smallest) tuple on ties.
        if best.as_ref().is_none_or(|(_, t)| score.total > *t) {
            best = Some((candidate, score.total));
        }
    }
    best.map(|(a, _)| a).ok_or(FixError::Unsatisfiable)
}
