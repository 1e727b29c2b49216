use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskfusion_core::head::{HeadParams, HeadShape};
use riskfusion_core::split::split_dataset;
use riskfusion_core::train::Logits;
use riskfusion_core::vote::{aggregate, TaskLogitsSet, VotingPolicy};
use riskfusion_core::{DatasetManifest, RiskLabel, Split, SubjectRecord, TaskKind};

fn manifest(labels: &[bool]) -> DatasetManifest {
    DatasetManifest {
        subjects: labels
            .iter()
            .enumerate()
            .map(|(i, &pos)| SubjectRecord {
                subject_id: format!("S{i:04}"),
                age: None,
                sex: None,
                label: if pos { RiskLabel::AtRisk } else { RiskLabel::NonRisk },
                split: None,
            })
            .collect(),
        ..Default::default()
    }
}

fn triple(values: [[f64; 2]; 3]) -> TaskLogitsSet {
    TaskLogitsSet::new(
        "S",
        TaskKind::ALL.iter().zip(values).map(|(&task, values)| Logits {
            subject_id: "S".into(),
            task,
            source_id: "m".into(),
            values,
            fallback: false,
        }),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn splits_partition_subjects(
        labels in proptest::collection::vec(any::<bool>(), 6..200),
        seed in any::<u64>(),
    ) {
        let m = manifest(&labels);
        let pos = labels.iter().filter(|&&b| b).count();
        prop_assume!(pos >= 3 && labels.len() - pos >= 3);
        let out = split_dataset(&m, [4, 1, 1], seed).unwrap();
        let mut union = BTreeSet::new();
        for split in Split::ALL {
            for s in out.subjects_in(split) {
                prop_assert!(union.insert(s.subject_id.clone()), "{} in two splits", s.subject_id);
            }
        }
        let all: BTreeSet<_> = m.subjects.iter().map(|s| s.subject_id.clone()).collect();
        prop_assert_eq!(union, all);
        prop_assert_eq!(out.clone(), split_dataset(&m, [4, 1, 1], seed).unwrap());
    }

    #[test]
    fn flipping_one_vote_to_at_risk_never_lowers_the_label(
        raw in proptest::array::uniform3(proptest::array::uniform2(-5.0f64..5.0)),
        which in 0usize..3,
    ) {
        let before = aggregate(&triple(raw), VotingPolicy::MajorityArgmax).unwrap();
        let mut flipped = raw;
        flipped[which] = [raw[which][1].min(raw[which][0]) - 1.0, raw[which][0].max(raw[which][1])];
        let after = aggregate(&triple(flipped), VotingPolicy::MajorityArgmax).unwrap();
        prop_assert!(!(before.label == RiskLabel::AtRisk && after.label == RiskLabel::NonRisk));
    }
}

#[test]
fn dropout_expectation_converges_to_eval_output() {
    let shape = HeadShape { input_dim: 5, hidden_dim: 64, dropout: 0.1 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = HeadParams::init(shape, &mut rng);
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = p.forward(&x).unwrap();
    let n = 40_000;
    let mut mean = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let l = p.forward_mode(&x, true, &mut rng).unwrap();
        for c in 0..2 {
            mean[c] += l[c];
            sq[c] += l[c] * l[c];
        }
    }
    for c in 0..2 {
        let m = mean[c] / n as f64;
        let var = sq[c] / n as f64 - m * m;
        let se = (var / n as f64).sqrt();
        assert!((m - eval[c]).abs() < 5.0 * se + 1e-12, "class {c}: {m} vs {}", eval[c]);
    }
}

#[test]
fn stratified_split_tracks_class_proportions() {
    // 90 at-risk, 30 non-risk
    let labels: Vec<bool> = (0..120).map(|i| i % 4 != 0).collect();
    let out = split_dataset(&manifest(&labels), [4, 1, 1], 3).unwrap();
    assert_eq!(out.split_counts(), [80, 20, 20]);
    for split in [Split::Dev, Split::Test] {
        let pos = out.subjects_in(split).filter(|s| s.label == RiskLabel::AtRisk).count();
        assert_eq!(pos, 15, "{split}");
    }
}
