//! Synthetic benchmark instances with a known planted labeling rule, used
//! by the heavier search-quality tests and the acceptance suite.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ConsistencyConstraint, Dataset, Example, TaskKind, FALSE_LABEL, TRUE_LABEL};
use crate::scorer::SyntheticScorer;

/// A dataset whose correct labels are known by construction: examples carry
/// one of two cluster tokens and the rule maps clusters to labels.
pub struct PlantedInstance {
    pub dataset: Dataset,
    pub scorer: SyntheticScorer,
    /// example id → planted label index.
    pub planted_labels: BTreeMap<String, usize>,
}

/// Tunable knobs of a planted instance.
///
/// `signal` is the per-example logit pushing toward the planted label,
/// `noise` the bounded per-example perturbation, `coupling` the in-context
/// coherence strength. With `noise > signal` a context-free scorer mislabels
/// a predictable fraction of examples while coherent context recovers them.
#[derive(Clone, Copy, Debug)]
pub struct PlantedParams {
    pub size: usize,
    pub coupling: f64,
    pub signal: f64,
    pub noise: f64,
    pub pair_constraints: usize,
    pub seed: u64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams { size: 10, coupling: 0.5, signal: 0.8, noise: 0.6, pair_constraints: 0, seed: 0 }
    }
}

/// Builds a two-cluster planted instance.
///
/// Cluster "alpha" examples are planted True, cluster "beta" examples False.
/// When `pair_constraints > 0`, that many disjoint (alpha, beta) pairs share
/// a group id and get a pair-flip constraint, which the planted labeling
/// satisfies.
pub fn planted_instance(params: PlantedParams) -> PlantedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut examples = Vec::with_capacity(params.size);
    let mut planted_labels = BTreeMap::new();
    let mut alpha_ids = Vec::new();
    let mut beta_ids = Vec::new();
    for i in 0..params.size {
        let is_alpha = rng.gen_bool(0.5);
        let cluster = if is_alpha { "alpha" } else { "beta" };
        let id = format!("p{i:03}");
        let claim = format!("{cluster} item{i}");
        let example = Example::new(
            id.clone(),
            TaskKind::YesNo,
            format!("Claim: {claim}.\nI think this Claim is"),
            claim,
        );
        let label = if is_alpha { TRUE_LABEL } else { FALSE_LABEL };
        planted_labels.insert(id.clone(), label);
        if is_alpha {
            alpha_ids.push(id);
        } else {
            beta_ids.push(id);
        }
        examples.push(example);
    }
    let mut dataset = Dataset::new(format!("planted-{}", params.seed), examples);

    let pairs = params.pair_constraints.min(alpha_ids.len()).min(beta_ids.len());
    for k in 0..pairs {
        let (a, b) = (&alpha_ids[k], &beta_ids[k]);
        let group = format!("pair{k}");
        for example in dataset.examples.iter_mut() {
            if &example.id == a || &example.id == b {
                example.group_id = Some(group.clone());
            }
        }
        dataset.constraints.push(ConsistencyConstraint::pair_flip(a.clone(), b.clone()));
    }

    let scorer = SyntheticScorer::new(params.coupling, params.seed, params.noise)
        .with_token_weight("alpha", TRUE_LABEL, params.signal)
        .with_token_weight("beta", FALSE_LABEL, params.signal);

    PlantedInstance { dataset, scorer, planted_labels }
}

/// Fraction of examples whose assigned label matches the planted rule.
pub fn planted_agreement(instance: &PlantedInstance, assignment: &crate::model::LabelAssignment) -> f64 {
    let total = instance.planted_labels.len();
    if total == 0 {
        return 0.0;
    }
    let matching = instance
        .planted_labels
        .iter()
        .filter(|(id, &label)| assignment.get(id) == Some(label))
        .count();
    matching as f64 / total as f64
}
