use proptest::prelude::*;
use riskfusion::asr::AsrGateway;
use riskfusion::extract::{ExtractionGateway, TemplateSet};
use riskfusion::manifest::{parse_manifest_str, serialize_manifest};
use riskfusion::predictions::{parse_csv, to_csv};
use riskfusion_core::domain::Sex;
use riskfusion_core::{
    DatasetManifest, FinalPrediction, Language, RecordingRef, RiskLabel, Split, SubjectRecord, TaskKind, Transcript,
    VotingPolicy,
};

fn label() -> impl Strategy<Value = RiskLabel> {
    prop_oneof![Just(RiskLabel::NonRisk), Just(RiskLabel::AtRisk)]
}

fn task() -> impl Strategy<Value = TaskKind> {
    prop_oneof![Just(TaskKind::ER), Just(TaskKind::PR), Just(TaskKind::ED)]
}

#[derive(Debug, Clone)]
struct SubjectDraft {
    age: Option<u32>,
    sex: Option<Sex>,
    label: RiskLabel,
    split: Option<Split>,
    tasks: [bool; 3],
    texts: [Option<String>; 3],
}

fn subject_draft() -> impl Strategy<Value = SubjectDraft> {
    (
        proptest::option::of(10u32..=18),
        proptest::option::of(prop_oneof![Just(Sex::F), Just(Sex::M)]),
        label(),
        proptest::option::of(prop_oneof![Just(Split::Train), Just(Split::Dev), Just(Split::Test)]),
        proptest::array::uniform3(any::<bool>()),
        proptest::array::uniform3(proptest::option::of("[a-z哭难过 ,.\"\\\\]{1,20}")),
    )
        .prop_map(|(age, sex, label, split, tasks, texts)| SubjectDraft { age, sex, label, split, tasks, texts })
}

fn build_manifest(drafts: Vec<SubjectDraft>) -> DatasetManifest {
    let mut m = DatasetManifest::default();
    for (i, d) in drafts.into_iter().enumerate() {
        let id = format!("S{i:03}");
        m.subjects.push(SubjectRecord {
            subject_id: id.clone(),
            age: d.age,
            sex: d.sex,
            label: d.label,
            split: d.split,
        });
        for (k, t) in TaskKind::ALL.into_iter().enumerate() {
            if d.tasks[k] {
                m.recordings.push(RecordingRef {
                    subject_id: id.clone(),
                    task: t,
                    audio_uri: format!("audio/{id}_{t}.wav"),
                    duration_s: Some(12.5),
                });
            }
            if let Some(text) = d.texts[k].clone().filter(|s| !s.trim().is_empty()) {
                m.transcripts.push(Transcript {
                    subject_id: id.clone(),
                    task: t,
                    language: Language::Zh,
                    text,
                    provider_id: "manual".into(),
                });
            }
        }
    }
    m
}

fn prediction() -> impl Strategy<Value = FinalPrediction> {
    (
        "[A-Za-z0-9_-]{1,8}",
        label(),
        proptest::collection::btree_map(task(), label(), 0..=3),
        0u32..=1_000_000,
        prop_oneof![Just(VotingPolicy::MajorityArgmax), Just(VotingPolicy::ProbSum)],
    )
        .prop_map(|(subject_id, label, per_task_votes, micros, policy)| FinalPrediction {
            subject_id,
            label,
            per_task_votes,
            at_risk_score: f64::from(micros) / 1e6,
            policy,
        })
}

proptest! {
    #[test]
    fn manifest_round_trips(drafts in proptest::collection::vec(subject_draft(), 1..12)) {
        let m = build_manifest(drafts);
        let text = serialize_manifest(&m);
        let back = parse_manifest_str(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_manifest(&back), text);
    }

    #[test]
    fn predictions_round_trip(preds in proptest::collection::vec(prediction(), 0..10)) {
        let csv = to_csv(&preds);
        prop_assert_eq!(parse_csv(&csv).unwrap(), preds);
    }

    #[test]
    fn feature_cache_key_is_injective(
        a in ("[a-z]{1,3}", "[a-z0-9-]{1,3}", "[A-Za-z0-9_]{1,4}", task(), any::<bool>()),
        b in ("[a-z]{1,3}", "[a-z0-9-]{1,3}", "[A-Za-z0-9_]{1,4}", task(), any::<bool>()),
    ) {
        let gw = ExtractionGateway::new(std::path::Path::new("/cache"), TemplateSet::builtin());
        let lang = |en: bool| if en { Language::En } else { Language::Zh };
        let pa = gw.cache_path(&a.0, &a.1, &a.2, a.3, lang(a.4));
        let pb = gw.cache_path(&b.0, &b.1, &b.2, b.3, lang(b.4));
        prop_assert_eq!(pa == pb, a == b);
    }

    #[test]
    fn asr_cache_key_is_injective(
        a in ("[a-z_./]{1,4}", "[A-Za-z0-9_./]{1,4}", task()),
        b in ("[a-z_./]{1,4}", "[A-Za-z0-9_./]{1,4}", task()),
    ) {
        let gw = AsrGateway::new(std::path::Path::new("/cache"), "/data");
        let pa = gw.cache_path(&a.0, &a.1, a.2);
        let pb = gw.cache_path(&b.0, &b.1, b.2);
        prop_assert_eq!(pa == pb, a == b);
        prop_assert!(pa.starts_with("/cache/asr"));
    }
}

#[test]
fn duplicate_keys_fail_to_parse() {
    let m = build_manifest(vec![SubjectDraft {
        age: None,
        sex: None,
        label: RiskLabel::AtRisk,
        split: None,
        tasks: [true, false, false],
        texts: [None, None, None],
    }]);
    let line = serialize_manifest(&m).lines().nth(1).unwrap().to_string();
    let doubled = format!("{}{line}\n", serialize_manifest(&m));
    assert!(parse_manifest_str(&doubled).is_err());
}
