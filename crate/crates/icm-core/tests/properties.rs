//! Property tests for the scoring, consistency, and sampling invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;

use icm_core::consistency::count_violations;
use icm_core::datasets::{sample, PROMPT_SUFFIX};
use icm_core::model::{
    label_tuples, ConsistencyConstraint, ConstraintKind, Dataset, Example, LabelAssignment, Provenance,
    ScoreBreakdown, TaskKind,
};
use icm_core::scorer::{mutual_predictability, ScorerBackend, ScoringContext, SyntheticScorer};

fn example(id: &str, claim: &str) -> Example {
    Example::new(id, TaskKind::YesNo, format!("Claim: {claim}.\n{PROMPT_SUFFIX}"), claim)
}

fn arb_scorer() -> impl Strategy<Value = SyntheticScorer> {
    (
        proptest::collection::vec(("[a-z]{2,8}", 0usize..2, -2.0f64..2.0), 0..6),
        0.0f64..3.0,
        any::<u64>(),
        0.0f64..1.5,
    )
        .prop_map(|(weights, coupling, seed, noise)| {
            let mut scorer = SyntheticScorer::new(coupling, seed, noise);
            for (token, label, weight) in weights {
                scorer = scorer.with_token_weight(&token, label, weight);
            }
            scorer
        })
}

proptest! {
    #[test]
    fn synthetic_log_probs_are_normalized(
        scorer in arb_scorer(),
        claim in "[a-z ]{1,40}",
        ctx_claims in proptest::collection::vec(("[a-z ]{1,30}", 0usize..2), 0..5),
    ) {
        let target = example("t", &claim);
        let ctx_examples: Vec<Example> =
            ctx_claims.iter().enumerate().map(|(i, (c, _))| example(&format!("c{i}"), c)).collect();
        let context = ScoringContext {
            entries: ctx_examples.iter().zip(ctx_claims.iter().map(|(_, l)| *l)).collect(),
        };
        let probs = scorer.label_log_probs(&target, &context).unwrap();
        let sum: f64 = probs.iter().map(|p| p.exp()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        prop_assert!(probs.iter().all(|&p| p <= 0.0));
    }

    #[test]
    fn matching_context_never_decreases_matching_label_score(
        coupling in 0.01f64..3.0,
        seed in any::<u64>(),
        noise in 0.0f64..1.0,
        claim in "[a-z]{3,20}",
        label in 0usize..2,
    ) {
        // Feature-identical, correctly-labeled context entry.
        let scorer = SyntheticScorer::new(coupling, seed, noise);
        let target = example("t", &claim);
        let twin = example("twin", &claim);
        let before = scorer.label_log_probs(&target, &ScoringContext::empty()).unwrap()[label];
        let context = ScoringContext { entries: vec![(&twin, label)] };
        let after = scorer.label_log_probs(&target, &context).unwrap()[label];
        prop_assert!(after >= before - 1e-12, "before {before} after {after}");
    }

    #[test]
    fn score_breakdown_total_recomputes_exactly(
        mp in -1e4f64..0.0,
        violations in 0usize..100,
        alpha in 0.01f64..200.0,
    ) {
        let s = ScoreBreakdown::new(mp, violations, alpha);
        prop_assert_eq!(s.total, s.recomputed_total());
    }

    #[test]
    fn violation_count_matches_naive_double_loop(
        n in 2usize..8,
        constraint_seeds in proptest::collection::vec((0usize..8, 0usize..8, proptest::bits::u8::ANY), 0..6),
        labels in proptest::collection::vec(proptest::option::of(0usize..2), 8),
    ) {
        let mut ds = Dataset::new("t", (0..n).map(|i| example(&format!("e{i}"), &format!("c{i}"))).collect());
        for (a, b, mask) in constraint_seeds {
            let (a, b) = (a % n, b % n);
            if a == b {
                continue;
            }
            let forbidden: BTreeSet<Vec<usize>> = label_tuples(&[2, 2])
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, t)| t)
                .collect();
            if forbidden.len() == 4 {
                continue; // unsatisfiable by construction
            }
            ds.constraints.push(ConsistencyConstraint {
                kind: ConstraintKind::Custom,
                member_ids: vec![format!("e{a}"), format!("e{b}")],
                forbidden,
            });
        }
        let mut assignment = LabelAssignment::new();
        for (i, label) in labels.iter().take(n).enumerate() {
            if let Some(l) = label {
                assignment.set(format!("e{i}"), *l, Provenance::Search);
            }
        }

        // Naive re-count straight from the definitions.
        let mut naive = 0usize;
        for c in &ds.constraints {
            let mut tuple = Vec::new();
            let mut complete = true;
            for id in &c.member_ids {
                match assignment.get(id) {
                    Some(l) => tuple.push(l),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete && c.forbidden.contains(&tuple) {
                naive += 1;
            }
        }
        prop_assert_eq!(count_violations(&ds, &assignment).count(), naive);
    }

    #[test]
    fn dataset_round_trips_through_json(
        n in 1usize..6,
        golds in proptest::collection::vec(proptest::option::of(0usize..2), 6),
        group in proptest::option::of("[a-z]{1,5}"),
    ) {
        let mut ds = Dataset::new("roundtrip", (0..n).map(|i| {
            let mut e = example(&format!("e{i}"), &format!("claim {i}"));
            e.gold_label = golds[i];
            e.group_id = group.clone();
            e.metadata.insert("framing".into(), "current".into());
            e
        }).collect());
        if n >= 2 {
            ds.constraints.push(ConsistencyConstraint::pair_flip("e0", "e1"));
        }
        let json = serde_json::to_string(&ds).unwrap();
        let back: Dataset = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn sampling_keeps_groups_whole(
        pairs in 1usize..8,
        singles in 0usize..8,
        seed in any::<u64>(),
    ) {
        let mut examples = Vec::new();
        for g in 0..pairs {
            for m in 0..2 {
                let mut e = example(&format!("g{g}m{m}"), &format!("c{g}{m}"));
                e.group_id = Some(format!("g{g}"));
                examples.push(e);
            }
        }
        for s in 0..singles {
            examples.push(example(&format!("s{s}"), &format!("cs{s}")));
        }
        let ds = Dataset::new("t", examples);
        let n = ds.len() / 2 + 1;
        if let Ok(sampled) = sample(&ds, n, seed) {
            prop_assert!(sampled.len() <= n);
            let kept: BTreeSet<&str> = sampled.examples.iter().map(|e| e.id.as_str()).collect();
            for g in 0..pairs {
                let a = kept.contains(format!("g{g}m0").as_str());
                let b = kept.contains(format!("g{g}m1").as_str());
                prop_assert_eq!(a, b, "group g{} split", g);
            }
        }
    }
}

#[test]
fn mutual_predictability_is_bit_identical_across_runs() {
    let ds = Dataset::new(
        "t",
        (0..30).map(|i| example(&format!("e{i}"), &format!("claim number {i}"))).collect(),
    );
    let mut assignment = LabelAssignment::new();
    for i in 0..30 {
        assignment.set(format!("e{i}"), i % 2, Provenance::Search);
    }
    let scorer = SyntheticScorer::new(0.8, 17, 0.4).with_token_weight("claim", 0, 0.3);
    let first = mutual_predictability(&scorer, &ds, &assignment, 8, 99).unwrap();
    for _ in 0..5 {
        let again = mutual_predictability(&scorer, &ds, &assignment, 8, 99).unwrap();
        assert_eq!(first.to_bits(), again.to_bits());
    }
}
