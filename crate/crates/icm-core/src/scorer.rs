//! Probability backbone: scoring backends, the leave-one-out mutual
//! predictability objective, and context assembly under a budget.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Dataset, Example, LabelAssignment};

/// Ordered in-context demonstrations: (example, chosen label index).
///
/// Never contains the example being scored.
#[derive(Clone, Debug, Default)]
pub struct ScoringContext<'a> {
    pub entries: Vec<(&'a Example, usize)>,
}

impl<'a> ScoringContext<'a> {
    pub fn empty() -> Self {
        ScoringContext { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|(e, _)| e.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreError {
    /// Transport failure talking to the backend.
    BackendUnreachable(String),
    /// Context entries exceed the backend's window.
    ContextOverflow { entries: usize, max_context: usize },
    InvalidLabel { id: String, label: usize, label_count: usize },
    ContextContainsTarget { id: String },
    /// A lower-level error annotated with the example being scored.
    ForExample { id: String, source: Box<ScoreError> },
}

impl ScoreError {
    pub fn for_example(self, id: &str) -> ScoreError {
        ScoreError::ForExample { id: id.to_owned(), source: Box::new(self) }
    }
}

impl core::fmt::Display for ScoreError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ScoreError::BackendUnreachable(detail) => write!(f, "backend unreachable: {detail}"),
            ScoreError::ContextOverflow { entries, max_context } => {
                write!(f, "context of {entries} entries exceeds backend max_context {max_context}")
            }
            ScoreError::InvalidLabel { id, label, label_count } => {
                write!(f, "label {label} invalid for example {id} with {label_count} candidates")
            }
            ScoreError::ContextContainsTarget { id } => {
                write!(f, "scoring context contains the target example {id}")
            }
            ScoreError::ForExample { id, source } => write!(f, "scoring example {id}: {source}"),
        }
    }
}

impl core::error::Error for ScoreError {}

/// A source of per-label log-probabilities for an example conditioned on
/// in-context demonstrations.
pub trait ScorerBackend {
    /// Whether identical (target, context) inputs give identical outputs.
    fn is_deterministic(&self) -> bool;

    /// Maximum number of context entries accepted per call.
    fn max_context(&self) -> usize;

    /// Log-probabilities over `target.candidate_labels`, normalized so the
    /// exponentials sum to 1.
    fn label_log_probs(&self, target: &Example, context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError>;
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for &B {
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
    fn max_context(&self) -> usize {
        (**self).max_context()
    }
    fn label_log_probs(&self, target: &Example, context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
        (**self).label_log_probs(target, context)
    }
}

/// Normalized log-probabilities over all candidate labels, after the
/// context checks shared by every scoring path.
pub fn score_distribution<B: ScorerBackend + ?Sized>(
    backend: &B,
    target: &Example,
    context: &ScoringContext<'_>,
) -> Result<Vec<f64>, ScoreError> {
    if context.contains(&target.id) {
        return Err(ScoreError::ContextContainsTarget { id: target.id.clone() });
    }
    if context.len() > backend.max_context() {
        return Err(ScoreError::ContextOverflow { entries: context.len(), max_context: backend.max_context() });
    }
    backend.label_log_probs(target, context)
}

/// log P(label | target, context) under the backend.
pub fn score_label<B: ScorerBackend + ?Sized>(
    backend: &B,
    target: &Example,
    context: &ScoringContext<'_>,
    label: usize,
) -> Result<f64, ScoreError> {
    if label >= target.label_count() {
        return Err(ScoreError::InvalidLabel { id: target.id.clone(), label, label_count: target.label_count() });
    }
    Ok(score_distribution(backend, target, context)?[label])
}

/// Index of the best-scoring label, ties broken toward the smallest index.
pub fn argmax_label(log_probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in log_probs.iter().enumerate().skip(1) {
        if p > log_probs[best] {
            best = i;
        }
    }
    best
}

/// Builds the conditioning set for one target: every other labeled example
/// in dataset order, subsampled uniformly (seeded) when over budget.
pub fn build_context<'a>(
    dataset: &'a Dataset,
    assignment: &LabelAssignment,
    target_id: &str,
    budget: usize,
    rng_seed: u64,
) -> ScoringContext<'a> {
    let labeled: Vec<(&Example, usize)> = dataset
        .examples
        .iter()
        .filter(|e| e.id != target_id)
        .filter_map(|e| assignment.get(&e.id).map(|l| (e, l)))
        .collect();
    if labeled.len() <= budget {
        return ScoringContext { entries: labeled };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen = rand::seq::index::sample(&mut rng, labeled.len(), budget).into_vec();
    chosen.sort_unstable();
    ScoringContext { entries: chosen.into_iter().map(|i| labeled[i]).collect() }
}

/// Summed leave-one-out log-probability of every assigned label.
///
/// Each labeled example is scored against a context drawn from all *other*
/// labeled examples under `context_budget`; the empty assignment sums to 0.
pub fn mutual_predictability<B: ScorerBackend + ?Sized>(
    backend: &B,
    dataset: &Dataset,
    assignment: &LabelAssignment,
    context_budget: usize,
    rng_seed: u64,
) -> Result<f64, ScoreError> {
    let mut sum = 0.0;
    for example in &dataset.examples {
        let Some(label) = assignment.get(&example.id) else { continue };
        // Per-target seed so over-budget subsamples differ across targets
        // but stay reproducible.
        let seed = rng_seed ^ fnv1a(example.id.as_bytes());
        let context = build_context(dataset, assignment, &example.id, context_budget, seed);
        let logp = score_label(backend, example, &context, label).map_err(|e| e.for_example(&example.id))?;
        sum += logp;
    }
    Ok(sum)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic value in [-1, 1] derived from a hash.
fn unit_noise(h: u64) -> f64 {
    (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
    let lse = max + libm::log(sum);
    logits.iter().map(|&z| z - lse).collect()
}

/// Deterministic logistic-rule scorer standing in for a pretrained LM.
///
/// The label logit is a sum of three terms: hashed token weights keyed by
/// (token, label), a context-coupling term that shifts a label's logit by
/// `context_coupling` times the feature similarity of every in-context
/// example carrying that label, and bounded per-(example, label) noise.
/// Log-probabilities are the log-softmax of the logits.
#[derive(Debug)]
pub struct SyntheticScorer {
    rule_weights: BTreeMap<u64, f64>,
    context_coupling: f64,
    noise_seed: u64,
    noise_scale: f64,
    token_cache: RefCell<BTreeMap<String, Vec<u64>>>,
}

impl SyntheticScorer {
    pub fn new(context_coupling: f64, noise_seed: u64, noise_scale: f64) -> Self {
        assert!(context_coupling >= 0.0, "context_coupling must be non-negative");
        SyntheticScorer {
            rule_weights: BTreeMap::new(),
            context_coupling,
            noise_seed,
            noise_scale,
            token_cache: RefCell::new(BTreeMap::new()),
        }
    }

    /// Uniform scorer: no weights, no coupling, no noise.
    pub fn uniform() -> Self {
        SyntheticScorer::new(0.0, 0, 0.0)
    }

    /// Adds `weight` to the logit of `label` whenever the target text
    /// contains `token`.
    pub fn with_token_weight(mut self, token: &str, label: usize, weight: f64) -> Self {
        let key = weight_key(fnv1a(token.to_lowercase().as_bytes()), label);
        *self.rule_weights.entry(key).or_insert(0.0) += weight;
        self
    }

    pub fn context_coupling(&self) -> f64 {
        self.context_coupling
    }

    fn tokens(&self, example: &Example) -> Vec<u64> {
        let text = if example.claim_text.is_empty() { &example.prompt_text } else { &example.claim_text };
        if let Some(cached) = self.token_cache.borrow().get(text) {
            return cached.clone();
        }
        let mut hashes: Vec<u64> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| fnv1a(t.to_lowercase().as_bytes()))
            .collect();
        hashes.sort_unstable();
        hashes.dedup();
        self.token_cache.borrow_mut().insert(text.clone(), hashes.clone());
        hashes
    }

    /// Cosine similarity of the two binary token-feature sets.
    fn similarity(a: &[u64], b: &[u64]) -> f64 {
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let mut shared = 0usize;
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        shared as f64 / libm::sqrt((a.len() * b.len()) as f64)
    }
}

fn weight_key(token_hash: u64, label: usize) -> u64 {
    splitmix64(token_hash ^ (label as u64).wrapping_mul(0x9e3779b97f4a7c15))
}

impl ScorerBackend for SyntheticScorer {
    fn is_deterministic(&self) -> bool {
        true
    }

    fn max_context(&self) -> usize {
        usize::MAX
    }

    fn label_log_probs(&self, target: &Example, context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
        let target_tokens = self.tokens(target);
        let mut logits = Vec::with_capacity(target.label_count());
        for label in 0..target.label_count() {
            let mut z = 0.0;
            for &token in &target_tokens {
                if let Some(w) = self.rule_weights.get(&weight_key(token, label)) {
                    z += w;
                }
            }
            if self.context_coupling > 0.0 {
                for (entry, entry_label) in &context.entries {
                    if *entry_label == label {
                        z += self.context_coupling * Self::similarity(&target_tokens, &self.tokens(entry));
                    }
                }
            }
            if self.noise_scale > 0.0 {
                let h = fnv1a(target.id.as_bytes()) ^ splitmix64(label as u64) ^ self.noise_seed;
                z += self.noise_scale * unit_noise(h);
            }
            logits.push(z);
        }
        Ok(log_softmax(&logits))
    }
}

/// Memoizes backend calls keyed by (target id, context id/label multiset).
///
/// Single-threaded; the annealing loop re-scores the same (target, context)
/// pairs heavily.
type CacheKey = (String, Vec<(String, usize)>);

pub struct CachedBackend<B> {
    inner: B,
    cache: RefCell<BTreeMap<CacheKey, Vec<f64>>>,
}

impl<B: ScorerBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        assert!(inner.is_deterministic(), "caching a non-deterministic backend changes its semantics");
        CachedBackend { inner, cache: RefCell::new(BTreeMap::new()) }
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: ScorerBackend> ScorerBackend for CachedBackend<B> {
    fn is_deterministic(&self) -> bool {
        true
    }

    fn max_context(&self) -> usize {
        self.inner.max_context()
    }

    fn label_log_probs(&self, target: &Example, context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
        let mut key_ctx: Vec<(String, usize)> =
            context.entries.iter().map(|(e, l)| (e.id.clone(), *l)).collect();
        key_ctx.sort();
        let key = (target.id.clone(), key_ctx);
        if let Some(hit) = self.cache.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let value = self.inner.label_log_probs(target, context)?;
        self.cache.borrow_mut().insert(key, value.clone());
        Ok(value)
    }
}

/// Test-support backends used across the workspace.
pub mod testing {
    use super::*;

    /// Context-blind backend driven by an explicit (example id, label) → logit
    /// table; missing entries default to logit 0.
    #[derive(Default)]
    pub struct TableBackend {
        logits: BTreeMap<(String, usize), f64>,
    }

    impl TableBackend {
        pub fn new() -> Self {
            Self::default()
        }

        pub fn with_logit(mut self, id: &str, label: usize, logit: f64) -> Self {
            self.logits.insert((id.to_owned(), label), logit);
            self
        }
    }

    impl ScorerBackend for TableBackend {
        fn is_deterministic(&self) -> bool {
            true
        }
        fn max_context(&self) -> usize {
            usize::MAX
        }
        fn label_log_probs(&self, target: &Example, _context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
            let logits: Vec<f64> = (0..target.label_count())
                .map(|l| self.logits.get(&(target.id.clone(), l)).copied().unwrap_or(0.0))
                .collect();
            Ok(log_softmax(&logits))
        }
    }

    /// Records every (target id, context ids) pair it is asked to score.
    pub struct RecordingBackend<B> {
        inner: B,
        pub calls: RefCell<Vec<(String, Vec<String>)>>,
    }

    impl<B: ScorerBackend> RecordingBackend<B> {
        pub fn new(inner: B) -> Self {
            RecordingBackend { inner, calls: RefCell::new(Vec::new()) }
        }
    }

    impl<B: ScorerBackend> ScorerBackend for RecordingBackend<B> {
        fn is_deterministic(&self) -> bool {
            self.inner.is_deterministic()
        }
        fn max_context(&self) -> usize {
            self.inner.max_context()
        }
        fn label_log_probs(&self, target: &Example, context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
            self.calls.borrow_mut().push((
                target.id.clone(),
                context.entries.iter().map(|(e, _)| e.id.clone()).collect(),
            ));
            self.inner.label_log_probs(target, context)
        }
    }

    /// Always fails with a transport error.
    pub struct UnreachableBackend;

    impl ScorerBackend for UnreachableBackend {
        fn is_deterministic(&self) -> bool {
            true
        }
        fn max_context(&self) -> usize {
            usize::MAX
        }
        fn label_log_probs(&self, _target: &Example, _context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
            Err(ScoreError::BackendUnreachable(String::from("synthetic transport failure")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::model::{Provenance, TaskKind};
    use alloc::format;
    use alloc::vec;

    fn example(id: &str, claim: &str) -> Example {
        Example::new(id, TaskKind::YesNo, format!("Claim: {claim}.\nI think this Claim is"), claim)
    }

    fn small_dataset(n: usize) -> Dataset {
        Dataset::new("t", (0..n).map(|i| example(&format!("e{i}"), &format!("claim number {i}"))).collect())
    }

    #[test]
    fn uniform_scorer_gives_log_half() {
        let scorer = SyntheticScorer::uniform();
        let e = example("a", "anything at all");
        let probs = scorer.label_log_probs(&e, &ScoringContext::empty()).unwrap();
        for p in probs {
            assert!((p - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_ignores_context() {
        let scorer = SyntheticScorer::new(0.0, 7, 0.25).with_token_weight("claim", 0, 0.4);
        let target = example("t", "claim about weather");
        let ctx_example = example("c", "claim about weather");
        let empty = scorer.label_log_probs(&target, &ScoringContext::empty()).unwrap();
        let ctx = ScoringContext { entries: vec![(&ctx_example, 0)] };
        let with_ctx = scorer.label_log_probs(&target, &ctx).unwrap();
        assert_eq!(empty, with_ctx);
    }

    #[test]
    fn synthetic_matches_independent_logistic_rule() {
        // Three weighted tokens, one context entry; recompute the rule by hand.
        let scorer = SyntheticScorer::new(0.8, 0, 0.0)
            .with_token_weight("wolves", 0, 0.5)
            .with_token_weight("howl", 0, 0.3)
            .with_token_weight("night", 1, 0.2);
        let target = example("t", "wolves howl at night");
        let demo = example("d", "wolves howl at dawn");
        let ctx = ScoringContext { entries: vec![(&demo, 0)] };
        let got = scorer.label_log_probs(&target, &ctx).unwrap();

        // Independent re-implementation: tokens {wolves, howl, at, night} vs
        // {wolves, howl, at, dawn} share 3 of 4, so cosine = 3/4.
        let sim = 3.0 / (4.0f64 * 4.0).sqrt();
        let z0 = 0.5 + 0.3 + 0.8 * sim;
        let z1: f64 = 0.2;
        let lse = (z0.exp() + z1.exp()).ln();
        assert!((got[0] - (z0 - lse)).abs() < 1e-12);
        assert!((got[1] - (z1 - lse)).abs() < 1e-12);
    }

    #[test]
    fn score_label_rejects_target_in_context() {
        let scorer = SyntheticScorer::uniform();
        let target = example("a", "x");
        let ctx = ScoringContext { entries: vec![(&target, 0)] };
        let err = score_label(&scorer, &target, &ctx, 0).unwrap_err();
        assert!(matches!(err, ScoreError::ContextContainsTarget { .. }));
    }

    #[test]
    fn score_label_rejects_invalid_label() {
        let scorer = SyntheticScorer::uniform();
        let target = example("a", "x");
        assert!(matches!(
            score_label(&scorer, &target, &ScoringContext::empty(), 2),
            Err(ScoreError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn empty_assignment_sums_to_zero() {
        let ds = small_dataset(3);
        let scorer = SyntheticScorer::uniform();
        let mp = mutual_predictability(&scorer, &ds, &LabelAssignment::new(), 8, 0).unwrap();
        assert_eq!(mp, 0.0);
    }

    #[test]
    fn single_label_gives_log_half() {
        let ds = small_dataset(3);
        let scorer = SyntheticScorer::uniform();
        let mut a = LabelAssignment::new();
        a.set("e0", 0, Provenance::Search);
        let mp = mutual_predictability(&scorer, &ds, &a, 8, 0).unwrap();
        assert!((mp - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mutual_predictability_sums_table_entries() {
        let ds = small_dataset(3);
        let backend = TableBackend::new()
            .with_logit("e0", 0, 1.0)
            .with_logit("e1", 0, -0.5)
            .with_logit("e2", 1, 2.0);
        let mut a = LabelAssignment::new();
        a.set("e0", 0, Provenance::Search);
        a.set("e1", 1, Provenance::Search);
        a.set("e2", 1, Provenance::Search);
        // Brute-force sum of the three normalized table entries.
        let mut expected = 0.0;
        for (id, label) in [("e0", 0usize), ("e1", 1), ("e2", 1)] {
            let probs = backend.label_log_probs(ds.example(id).unwrap(), &ScoringContext::empty()).unwrap();
            expected += probs[label];
        }
        let mp = mutual_predictability(&backend, &ds, &a, 8, 0).unwrap();
        assert!((mp - expected).abs() < 1e-12);
    }

    #[test]
    fn backend_error_names_failing_example() {
        let ds = small_dataset(2);
        let mut a = LabelAssignment::new();
        a.set("e1", 0, Provenance::Search);
        let err = mutual_predictability(&UnreachableBackend, &ds, &a, 8, 0).unwrap_err();
        assert!(matches!(err, ScoreError::ForExample { ref id, .. } if id == "e1"));
    }

    #[test]
    fn context_under_budget_keeps_dataset_order() {
        let ds = small_dataset(6);
        let mut a = LabelAssignment::new();
        for i in 0..5 {
            a.set(format!("e{i}"), 0, Provenance::Search);
        }
        let ctx = build_context(&ds, &a, "e2", 10, 0);
        let ids: Vec<&str> = ctx.entries.iter().map(|(e, _)| e.id.as_str()).collect();
        assert_eq!(ids, vec!["e0", "e1", "e3", "e4"]);
    }

    #[test]
    fn zero_budget_gives_empty_context() {
        let ds = small_dataset(5);
        let mut a = LabelAssignment::new();
        for i in 0..5 {
            a.set(format!("e{i}"), 0, Provenance::Search);
        }
        assert!(build_context(&ds, &a, "e0", 0, 0).is_empty());
    }

    #[test]
    fn over_budget_sampling_is_deterministic() {
        let ds = small_dataset(100);
        let mut a = LabelAssignment::new();
        for i in 0..100 {
            a.set(format!("e{i}"), 0, Provenance::Search);
        }
        let first = build_context(&ds, &a, "e0", 8, 42);
        assert_eq!(first.len(), 8);
        for _ in 0..3 {
            let again = build_context(&ds, &a, "e0", 8, 42);
            let a_ids: Vec<&str> = first.entries.iter().map(|(e, _)| e.id.as_str()).collect();
            let b_ids: Vec<&str> = again.entries.iter().map(|(e, _)| e.id.as_str()).collect();
            assert_eq!(a_ids, b_ids);
        }
    }

    #[test]
    fn leave_one_out_never_conditions_on_target() {
        let ds = small_dataset(10);
        let mut a = LabelAssignment::new();
        for i in 0..10 {
            a.set(format!("e{i}"), i % 2, Provenance::Search);
        }
        let recording = RecordingBackend::new(SyntheticScorer::uniform());
        mutual_predictability(&recording, &ds, &a, 4, 3).unwrap();
        for (target, context_ids) in recording.calls.borrow().iter() {
            assert!(!context_ids.contains(target), "example {target} conditioned on itself");
        }
    }

    #[test]
    fn cached_backend_matches_uncached() {
        let ds = small_dataset(4);
        let mut a = LabelAssignment::new();
        for i in 0..4 {
            a.set(format!("e{i}"), 1, Provenance::Search);
        }
        let plain = SyntheticScorer::new(0.5, 1, 0.1).with_token_weight("claim", 0, 0.3);
        let cached = CachedBackend::new(SyntheticScorer::new(0.5, 1, 0.1).with_token_weight("claim", 0, 0.3));
        let a1 = mutual_predictability(&plain, &ds, &a, 8, 0).unwrap();
        let b1 = mutual_predictability(&cached, &ds, &a, 8, 0).unwrap();
        let b2 = mutual_predictability(&cached, &ds, &a, 8, 0).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(b1, b2);
    }
}
