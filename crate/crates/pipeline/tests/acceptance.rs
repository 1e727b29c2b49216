//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use riskfusion::extract::RiskFeatureText;
use riskfusion::provenance::sha256_file;
use riskfusion::stages::{read_jsonl, Runner, Stage, FEATURES_FILE};
use riskfusion_core::fusion::FusionConfig;
use riskfusion_core::head::{cross_entropy, HeadShape, CLASSIFIER_HIDDEN, DROPOUT, FUSION_HIDDEN};
use riskfusion_core::metrics::{accuracy, confusion, f1, render_report, ReportEntry};
use riskfusion_core::mock::{count_occurrences, MarkerLexicon};
use riskfusion_core::optim::ScheduleError;
use riskfusion_core::rng::ChaCha8Rng;
use riskfusion_core::train::{argmax, train_classifier};
use riskfusion_core::vote::aggregate;
use riskfusion_core::{
    cosine_lr, BagOfMarkers, ClassifierHeadConfig, ConfusionCounts, EncoderInput, FinalPrediction, HeadParams,
    Language, Logits, MetricsResult, RiskLabel, Split, TaskKind, TaskLogitsSet, VotingPolicy,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let e = started.elapsed();
    ensure(e < limit, || format!("took {e:.2?}, limit {limit:?}"))
}

fn random_counts(rng: &mut ChaCha8Rng) -> ConfusionCounts {
    let mut d = || rng.random_range(0..60u64);
    ConfusionCounts::new(d(), d(), d(), d())
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut compared_f1 = 0;
    for i in 0..1000 {
        let c = random_counts(&mut rng);
        let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
        let p = tp / (tp + fp);
        let r = tp / (tp + fn_);
        if (p + r) > 0.0 {
            let oracle = 2.0 * p * r / (p + r);
            let got = f1(&c).ok_or(format!("case {i}: f1 undefined for {c:?}"))?;
            ensure((got - oracle).abs() <= 1e-12, || format!("case {i}: f1 {got} vs {oracle}"))?;
            compared_f1 += 1;
        }
        // Expand to one (predicted, actual) pair per subject and score it.
        let mut pairs = Vec::new();
        pairs.extend((0..c.tp).map(|_| (RiskLabel::AtRisk, RiskLabel::AtRisk)));
        pairs.extend((0..c.tn).map(|_| (RiskLabel::NonRisk, RiskLabel::NonRisk)));
        pairs.extend((0..c.fp).map(|_| (RiskLabel::AtRisk, RiskLabel::NonRisk)));
        pairs.extend((0..c.fn_).map(|_| (RiskLabel::NonRisk, RiskLabel::AtRisk)));
        if pairs.is_empty() {
            ensure(accuracy(&c).is_err(), || "zero total must be an error".into())?;
            continue;
        }
        let correct: f64 = pairs.iter().map(|(p, a)| if p == a { 1.0 } else { 0.0 }).sum();
        let oracle = correct / pairs.len() as f64;
        let got = accuracy(&c).map_err(|e| e.to_string())?;
        ensure(got == oracle, || format!("case {i}: accuracy {got} vs {oracle}"))?;

        let preds: Vec<FinalPrediction> = pairs
            .iter()
            .enumerate()
            .map(|(k, (p, _))| FinalPrediction {
                subject_id: format!("S{k}"),
                label: *p,
                per_task_votes: BTreeMap::new(),
                at_risk_score: 0.0,
                policy: VotingPolicy::MajorityArgmax,
            })
            .collect();
        let labels: BTreeMap<String, RiskLabel> =
            pairs.iter().enumerate().map(|(k, (_, a))| (format!("S{k}"), *a)).collect();
        let counted = confusion(&preds, &labels).map_err(|e| e.to_string())?;
        ensure(counted == c, || format!("case {i}: confusion {counted:?} vs {c:?}"))?;
    }
    within(started, Duration::from_secs(5))?;
    Ok(format!("1000 count vectors, {compared_f1} with defined precision+recall"))
}

fn reported_row() -> Outcome {
    let started = Instant::now();
    let c = ConfusionCounts::new(36, 32, 16, 16);
    let acc = accuracy(&c).map_err(|e| e.to_string())?;
    let f = f1(&c).ok_or("f1 undefined")?;
    ensure((acc - 0.68).abs() < 1e-12, || format!("acc {acc}"))?;
    ensure((f - 0.6923).abs() <= 5e-5, || format!("f1 {f}"))?;
    let entry = ReportEntry {
        method: "Qwen-CBERT+XLSR".into(),
        per_task: BTreeMap::new(),
        combined: Some(MetricsResult::from_counts(c)),
    };
    let table = render_report("dev", &TaskKind::ALL, &[entry], Default::default());
    let cells = &table.rows[0].cells;
    let combined = &cells[cells.len() - 2..];
    ensure(combined == ["68", "69.23"], || format!("cells {combined:?}"))?;
    ensure(table.to_text().contains("68") && table.to_text().contains("69.23"), || table.to_text())?;
    within(started, Duration::from_secs(1))?;
    Ok(format!("Acc {acc:.2}, F1 {f:.6}, cells {combined:?}"))
}

fn logits(task: TaskKind, values: [f64; 2]) -> Logits {
    Logits { subject_id: "S".into(), task, source_id: "m".into(), values, fallback: false }
}

/// Majority of per-task argmax votes, ties voting AtRisk; written independently
/// of the library.
fn oracle_majority(v: &[[f64; 2]]) -> RiskLabel {
    let at = v.iter().filter(|l| l[1] >= l[0]).count();
    if 2 * at > v.len() {
        RiskLabel::AtRisk
    } else {
        RiskLabel::NonRisk
    }
}

fn oracle_prob_sum(v: &[[f64; 2]]) -> (RiskLabel, f64) {
    let p_at: Vec<f64> = v.iter().map(|l| 1.0 / (1.0 + (l[0] - l[1]).exp())).collect();
    let sum_at: f64 = p_at.iter().sum();
    let sum_non = v.len() as f64 - sum_at;
    let label = if sum_at >= sum_non { RiskLabel::AtRisk } else { RiskLabel::NonRisk };
    (label, sum_at / v.len() as f64)
}

fn vote(v: &[[f64; 2]], policy: VotingPolicy) -> Result<FinalPrediction, String> {
    let set =
        TaskLogitsSet::new("S", TaskKind::ALL.iter().zip(v).map(|(t, l)| logits(*t, *l))).map_err(|e| e.to_string())?;
    aggregate(&set, policy).map_err(|e| e.to_string())
}

fn voting() -> Outcome {
    let started = Instant::now();
    for combo in 0..8u32 {
        let v: Vec<[f64; 2]> = (0..3).map(|k| if combo >> k & 1 == 1 { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
        let expected = if combo.count_ones() >= 2 { RiskLabel::AtRisk } else { RiskLabel::NonRisk };
        let got = vote(&v, VotingPolicy::MajorityArgmax)?.label;
        ensure(got == expected, || format!("votes {combo:03b}: {got:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let v: Vec<[f64; 2]> = (0..3).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let maj = vote(&v, VotingPolicy::MajorityArgmax)?;
        ensure(maj.label == oracle_majority(&v), || format!("triple {i}: majority {:?}", maj.label))?;
        let (label, score) = oracle_prob_sum(&v);
        let ps = vote(&v, VotingPolicy::ProbSum)?;
        ensure(ps.label == label, || format!("triple {i}: prob_sum {:?}", ps.label))?;
        for p in [&maj, &ps] {
            ensure((p.at_risk_score - score).abs() < 1e-12, || format!("triple {i}: score {}", p.at_risk_score))?;
        }
    }
    for i in 0..100 {
        let v: Vec<[f64; 2]> = (0..3).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let mut shifted = v.clone();
        let k = rng.random_range(0..3);
        let c = rng.random_range(-50.0..50.0);
        shifted[k] = [v[k][0] + c, v[k][1] + c];
        for policy in [VotingPolicy::MajorityArgmax, VotingPolicy::ProbSum] {
            let (a, b) = (vote(&v, policy)?, vote(&shifted, policy)?);
            ensure(a.label == b.label && a.per_task_votes == b.per_task_votes, || {
                format!("shift {i} changed {policy:?}")
            })?;
        }
    }
    within(started, Duration::from_secs(10))?;
    Ok("8 vote patterns, 1000 triples x 2 policies, 100 shifts".into())
}

const EPS: f64 = 1e-3;

/// Central-difference check of every differentiable parameter; returns the
/// fraction checked (entries whose perturbation crosses a ReLU kink are skipped).
fn gradient_instance(shape: HeadShape, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = HeadParams::init(shape, &mut rng);
    let x: Vec<f64> = (0..shape.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = if rng.random::<bool>() { RiskLabel::AtRisk } else { RiskLabel::NonRisk };
    let g = p.loss_gradient(&x, y, None).map_err(|e| e.to_string())?;
    let (n_in, n_hid) = (shape.input_dim, shape.hidden_dim);
    let pre: Vec<f64> = (0..n_hid)
        .map(|j| (0..n_in).map(|i| p.values()[j * n_in + i] * x[i]).sum::<f64>() + p.values()[n_in * n_hid + j])
        .collect();
    let loss = |p: &HeadParams| cross_entropy(p.forward(&x).expect("dimension"), y);
    let mut checked = 0usize;
    for k in 0..p.param_count() {
        let kink_scale = if k < n_in * n_hid {
            Some((k / n_in, x[k % n_in].abs()))
        } else if k < n_in * n_hid + n_hid {
            Some((k - n_in * n_hid, 1.0))
        } else {
            None
        };
        if let Some((j, s)) = kink_scale {
            if pre[j].abs() <= EPS * s * 1.01 {
                continue;
            }
        }
        let orig = p.values()[k];
        p.values_mut()[k] = orig + EPS;
        let up = loss(&p);
        p.values_mut()[k] = orig - EPS;
        let down = loss(&p);
        p.values_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let analytic = g.params[k];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        ensure(rel <= 1e-4, || format!("seed {seed}, parameter {k}: analytic {analytic}, numeric {numeric}"))?;
        checked += 1;
    }
    Ok(checked as f64 / p.param_count() as f64)
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let mut min_fraction: f64 = 1.0;
    for (hidden, base) in [(CLASSIFIER_HIDDEN, 100), (FUSION_HIDDEN, 200)] {
        for i in 0..20u64 {
            let shape = HeadShape { input_dim: 1 + (i as usize % 16), hidden_dim: hidden, dropout: DROPOUT };
            min_fraction = min_fraction.min(gradient_instance(shape, base + i)?);
        }
    }
    ensure(min_fraction > 0.9, || format!("only {min_fraction:.3} of parameters checkable"))?;
    within(started, Duration::from_secs(60))?;
    Ok(format!("20 classifier + 20 fusion heads, >= {:.1}% of parameters each", 100.0 * min_fraction))
}

fn architecture() -> Outcome {
    let head = ClassifierHeadConfig { input_dim: 768 }.shape();
    let fusion = FusionConfig::new("t", "s").shape(1792);
    let (h, f) = (head.param_count(), fusion.param_count());
    ensure(h == 394_754, || format!("classifier {h}"))?;
    ensure(f == 459_522, || format!("fusion {f}"))?;
    ensure(HeadParams::zeros(head).values().len() == h && HeadParams::zeros(fusion).values().len() == f, || {
        "allocated parameter vectors differ from the counts".into()
    })?;
    Ok(format!("{h} and {f}"))
}

fn run_synthetic(root: &Path, seed: u64, language: &str) -> Result<Runner, String> {
    let cfg = common::synthetic_experiment(root, seed, language);
    let runner = Runner::new(cfg).map_err(|e| e.to_string())?;
    runner.run_all().map_err(|e| e.to_string())?;
    Ok(runner)
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runner = run_synthetic(dir.path(), 7, "zh")?;
    let eval = runner.evaluation(Split::Dev).map_err(|e| e.to_string())?;
    let acc = eval.combined.acc.ok_or("no dev accuracy")?;
    ensure(eval.combined.n == 20, || format!("dev has {} subjects", eval.combined.n))?;
    ensure(acc >= 0.85, || format!("combined dev accuracy {acc}"))?;
    within(started, Duration::from_secs(300))?;
    Ok(format!("combined dev accuracy {acc:.2} over {} subjects in {:.1?}", eval.combined.n, started.elapsed()))
}

fn text_branch_counts(runner: &Runner, language: Language) -> Result<BTreeMap<TaskKind, ConfusionCounts>, String> {
    let features: Vec<RiskFeatureText> =
        read_jsonl(&runner.stage_dir(Stage::Extract).join(FEATURES_FILE)).map_err(|e| e.to_string())?;
    let manifest = riskfusion::manifest::parse_manifest(&runner.stage_dir(Stage::Ingest).join("manifest.jsonl"))
        .map_err(|e| e.to_string())?;
    let lexicon: MarkerLexicon = serde_json::from_str(
        &fs::read_to_string(runner.config().resolve(runner.config().extraction.lexicon.as_ref().unwrap())).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for task in TaskKind::TEXT {
        let text: BTreeMap<&str, &str> = features
            .iter()
            .filter(|f| f.task == task && f.language == language)
            .map(|f| (f.subject_id.as_str(), f.text.as_str()))
            .collect();
        let set = |split| -> Vec<(EncoderInput, RiskLabel)> {
            manifest
                .subjects_in(split)
                .filter_map(|s| Some((EncoderInput::Text(text.get(s.subject_id.as_str())?.to_string()), s.label)))
                .collect()
        };
        let encoder = BagOfMarkers::new("bag-of-markers", 16, lexicon.slots(), true).map_err(|e| e.to_string())?;
        let hyper = runner.config().text_hyperparams();
        let (train, dev) = (set(Split::Train), set(Split::Dev));
        let model = train_classifier(&train, &dev, encoder, task, ClassifierHeadConfig { input_dim: 16 }, &hyper)
            .map_err(|e| e.to_string())?;
        let pairs = dev.iter().map(|(x, y)| Ok((argmax(model.logits(x).map_err(|e| e.to_string())?), *y)));
        out.insert(task, ConfusionCounts::from_pairs(pairs.collect::<Result<Vec<_>, String>>()?));
    }
    Ok(out)
}

fn bilingual_parity() -> Outcome {
    let (zh_dir, en_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let zh = run_synthetic(zh_dir.path(), 11, "zh")?;
    let en = run_synthetic(en_dir.path(), 11, "en")?;

    // The two feature sets really are in different languages, with the same markers.
    let features =
        |r: &Runner| -> Vec<RiskFeatureText> { read_jsonl(&r.stage_dir(Stage::Extract).join(FEATURES_FILE)).unwrap() };
    let all = features(&zh);
    let lex = riskfusion::synth::SyntheticSpec::default();
    let mut english_bearing = 0;
    for pair in all.chunks(2) {
        let (z, e) = (&pair[0], &pair[1]);
        ensure(z.language == Language::Zh && e.language == Language::En, || "feature order".into())?;
        for m in &lex.markers {
            ensure(count_occurrences(&z.text, &m.zh) == count_occurrences(&e.text, &m.en), || {
                format!("{}/{}: marker {} count differs", z.subject_id, z.task, m.zh)
            })?;
        }
        english_bearing += usize::from(e.text != z.text);
    }
    ensure(english_bearing > 0, || "English features identical to Chinese".into())?;

    let (zc, ec) = (text_branch_counts(&zh, Language::Zh)?, text_branch_counts(&en, Language::En)?);
    ensure(zc == ec, || format!("text branch zh {zc:?} vs en {ec:?}"))?;
    for split in [Split::Dev, Split::Test] {
        let (a, b) = (zh.evaluation(split).unwrap(), en.evaluation(split).unwrap());
        ensure(a.combined.counts == b.combined.counts, || format!("{split} combined counts differ"))?;
        let counts =
            |e: &riskfusion::stages::Evaluation| e.per_task.iter().map(|(t, m)| (*t, m.counts)).collect::<Vec<_>>();
        ensure(counts(&a) == counts(&b), || format!("{split} per-task counts differ"))?;
    }
    Ok(format!("text branch ER {:?} / ED {:?} identical for zh and en", zc[&TaskKind::ER], zc[&TaskKind::ED]))
}

fn determinism() -> Outcome {
    let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run_synthetic(a_dir.path(), 5, "zh")?;
    let b = run_synthetic(b_dir.path(), 5, "zh")?;
    let mut compared = 0;
    for split in [Split::Dev, Split::Test] {
        let (at, ac) = a.report_files(split);
        let (bt, bc) = b.report_files(split);
        for (x, y) in [(a.predictions_path(split), b.predictions_path(split)), (at, bt), (ac, bc)] {
            let (xa, ya) = (fs::read(&x).map_err(|e| e.to_string())?, fs::read(&y).map_err(|e| e.to_string())?);
            ensure(xa == ya, || format!("{} differs from {}", x.display(), y.display()))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} prediction/report files byte-identical"))
}

fn repr_hashes(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if matches!(p.extension().and_then(|x| x.to_str()), Some("f32" | "idx")) {
            out.insert(p.clone(), sha256_file(&p).unwrap());
        }
    }
    out
}

fn schedule_and_frozen() -> Outcome {
    let base = 5e-5;
    ensure(cosine_lr(0, 100, base) == Ok(base), || "start".into())?;
    ensure(cosine_lr(100, 100, base) == Ok(0.0), || "end".into())?;
    ensure((cosine_lr(50, 100, base).unwrap() - 2.5e-5).abs() < 1e-18, || "midpoint".into())?;
    ensure(matches!(cosine_lr(101, 100, base), Err(ScheduleError::OutOfRange { .. })), || {
        "out of range accepted".into()
    })?;
    for total in 1..=200 {
        for step in 0..total {
            let (a, b) = (cosine_lr(step, total, base).unwrap(), cosine_lr(step + 1, total, base).unwrap());
            ensure(a >= b, || format!("increase at {step}/{total}"))?;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_experiment(dir.path(), 13, "zh");
    let runner = Runner::new(cfg).map_err(|e| e.to_string())?;
    for s in &Stage::PIPELINE[..6] {
        runner.run(*s).map_err(|e| e.to_string())?;
    }
    let repr_dir = runner.stage_dir(Stage::ExportRepr);
    let before = repr_hashes(&repr_dir);
    runner.run(Stage::TrainFusion).map_err(|e| e.to_string())?;
    let after = repr_hashes(&repr_dir);
    ensure(before == after && !before.is_empty(), || "representation files changed during fusion training".into())?;
    let rerun = Runner::new(common::synthetic_experiment(dir.path(), 13, "zh")).unwrap().force(true);
    rerun.run(Stage::ExportRepr).map_err(|e| e.to_string())?;
    ensure(repr_hashes(&repr_dir) == before, || "re-encoding produced different vectors".into())?;
    Ok(format!("schedule checked for 200 horizons; {} representation files unchanged", before.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", metric_oracle),
        ("reported-row consistency (68 / 69.23)", reported_row),
        ("voting brute force", voting),
        ("gradient checks", gradients),
        ("architecture arithmetic", architecture),
        ("end-to-end synthetic run", end_to_end),
        ("bilingual parity", bilingual_parity),
        ("determinism", determinism),
        ("schedule and frozen contracts", schedule_and_frozen),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = started.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {elapsed:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {elapsed:.2?})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
