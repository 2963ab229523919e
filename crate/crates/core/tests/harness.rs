//! Experiment harness: reproducibility, bookkeeping of diverged runs,
//! gating and budget matching.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use privopt::harness::aggregate::mean_se;
use privopt::harness::output::write_outcome;
use privopt::harness::{AggregateResult, Experiment, ExperimentConfig};
use privopt::solvers::{Family, Variant};

const BASE: &str = r#"
[problem]
seed = 1

[graph]
edges = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 0], [0, 2], [3, 1]]

[schedules]
lambda = { form = "decaying", a = 0.02, b = 0.1, p = 1.0 }
gamma = { form = "decaying", a = 1.0, b = 0.1, p = 0.9 }
gamma1 = { form = "decaying", a = 1.0, b = 0.1, p = 0.9 }
gamma2 = { form = "decaying", a = 1.0, b = 0.1, p = 0.7 }
alpha = { form = "decaying", a = 0.02, b = 0.1, p = 1.0 }

[noise]
seed = 99
nu = { form = "growing", a = 1.0, b = 0.1, p = 0.3 }

[run]
variant = "alg1"
iterations = 400
monte_carlo = 8
stride = 20
output = "out"
"#;

fn experiment_from(text: &str, dir: &Path) -> Experiment {
    let cfg = ExperimentConfig::parse(text, &dir.join("config.toml")).unwrap();
    Experiment::new(cfg).unwrap()
}

fn experiment(dir: &Path) -> Experiment {
    experiment_from(BASE, dir)
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn identical_configs_give_byte_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let exp = experiment(dir);
        for v in [Variant::Alg1, Variant::PdopAlg1] {
            let outcome = exp.monte_carlo(v, 8, 400).unwrap();
            write_outcome(&exp.config.run.output, &outcome, true).unwrap();
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 20, "only {} files written", fa.len());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (path, bytes) in &fa {
        assert!(bytes == &fb[path], "{} differs", path.display());
    }
}

#[test]
fn halves_of_the_ensemble_agree() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path());
    let outcome = exp.monte_carlo(Variant::Alg1, 100, 2000).unwrap();
    let gaps = outcome.final_gaps();
    let (m1, se1) = mean_se(&gaps[..50]);
    let (m2, se2) = mean_se(&gaps[50..]);
    let pooled = (se1 * se1 + se2 * se2).sqrt();
    assert!((m1 - m2).abs() < 3.0 * pooled, "{m1} ± {se1} vs {m2} ± {se2}");
}

#[test]
fn run_seeds_are_distinct_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path());
    let seeds: Vec<_> = (0..200).map(|i| exp.run_seeds(i)).collect();
    let mut noise: Vec<u64> = seeds.iter().map(|s| s.noise).collect();
    noise.sort_unstable();
    noise.dedup();
    assert_eq!(noise.len(), 200);
    assert_eq!(exp.run_seeds(17), seeds[17]);
}

fn count_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn every_run_is_a_trace_file_or_a_failure_record() {
    let dir = tempfile::tempdir().unwrap();
    // an oversized stepsize diverges for large starting points only
    let text = BASE
        .replace(
            "lambda = { form = \"decaying\", a = 0.02",
            "lambda = { form = \"decaying\", a = 0.6",
        )
        .replace("[run]", "[run]\ninit_radius = 40.0")
        .replace("[noise]\n", "[noise]\nenabled = false\n");
    let exp = experiment_from(&text, dir.path());
    let n = 40;
    let outcome = exp.monte_carlo(Variant::Dgd, n, 300).unwrap();
    let agg = write_outcome(&exp.config.run.output, &outcome, false).unwrap();
    let base = exp.config.run.output.join("dgd");
    let traces = fs::read_dir(base.join("runs")).unwrap().count();
    let failures = count_rows(&base.join("failures.csv"));
    assert_eq!(traces + failures, n);
    assert_eq!(agg.completed() + agg.failed.len(), n);
    assert_eq!(count_rows(&base.join("finals.csv")), traces);
    assert!(failures > 0, "expected some diverged runs");
    let gaps = outcome.final_gaps();
    assert_eq!(gaps.iter().filter(|g| g.is_infinite()).count(), failures);
}

#[test]
fn single_noiseless_run_is_its_own_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("[noise]\n", "[noise]\nenabled = false\n");
    let exp = experiment_from(&text, dir.path());
    let outcome = exp.monte_carlo(Variant::Alg2, 1, 400).unwrap();
    assert!(outcome.budget.is_none());
    let agg = AggregateResult::from_outcome(&outcome);
    let trace = &outcome.runs[0].trace;
    assert_eq!(agg.rows.len(), trace.records.len());
    for (row, rec) in agg.rows.iter().zip(&trace.records) {
        assert_eq!(row.k, rec.k);
        assert_eq!(row.mean_gap, rec.gap);
        assert_eq!(row.mean_consensus, rec.consensus);
        assert_eq!(row.mean_tracking, rec.tracking);
        assert_eq!((row.var_gap, row.var_consensus, row.var_tracking), (0.0, 0.0, 0.0));
        assert!(row.epsilon_partial.is_infinite());
    }
}

#[test]
fn pdop_budgets_are_matched() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path());
    let t = 1000;
    for (primary, baseline) in [
        (Variant::Alg1, Variant::PdopAlg1),
        (Variant::Alg2, Variant::PdopPushPull),
    ] {
        let ours = exp.ledger(primary, t).unwrap().unwrap().1.at(t);
        let theirs = exp.ledger(baseline, t).unwrap().unwrap().1.at(t);
        assert!(((theirs - ours) / ours).abs() < 0.05, "{baseline}: {theirs} vs {ours}");
    }
    let text = BASE.replace("[run]", "[pdop]\nmatch_budget = false\n\n[run]");
    let unmatched = experiment_from(&text, dir.path());
    let ours = unmatched.ledger(Variant::Alg1, t).unwrap().unwrap().1.at(t);
    let theirs = unmatched.ledger(Variant::PdopAlg1, t).unwrap().unwrap().1.at(t);
    assert!(((theirs - ours) / ours).abs() > 0.05);
}

#[test]
fn gradient_bound_is_harvested_unless_configured() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path());
    let harvested = exp.gradient_bound(Family::StaticConsensus, 500).unwrap();
    assert!(harvested > 0.0 && harvested.is_finite());
    assert_eq!(harvested, exp.gradient_bound(Family::StaticConsensus, 500).unwrap());
    let text = format!("{BASE}\n[privacy]\ngradient_bound = 2.5\n");
    let fixed = experiment_from(&text, dir.path());
    assert_eq!(fixed.gradient_bound(Family::GradientTracking, 500).unwrap(), 2.5);
    let (ledger, budget) = fixed.ledger(Variant::Alg2, 500).unwrap().unwrap();
    assert_eq!(ledger.gradient_bound, 2.5);
    assert_eq!(budget.partials.len(), 501);
}

#[test]
fn baselines_gate_on_graph_conditions_only() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path());
    assert!(exp.gate(Variant::Alg1).overall());
    assert!(exp.validate(Variant::Alg1).overall());
    for v in [Variant::Dgd, Variant::PushPull] {
        assert!(
            !exp.validate(v).overall(),
            "{v} breaks its schedule conditions by design"
        );
        assert!(exp.gate(v).overall(), "{v}: {:?}", exp.gate(v).failures());
    }
    let text = BASE.replace("p = 0.9 }\ngamma1", "p = 1.1 }\ngamma1");
    let bad = experiment_from(&text, dir.path());
    assert_eq!(bad.gate(Variant::Alg1).entry("Σγ = ∞").map(|e| e.passed), Some(false));
    assert!(bad.gate(Variant::Dgd).overall());
}

#[test]
fn budgets_distinguish_geometric_and_constant_noise() {
    let dir = tempfile::tempdir().unwrap();
    let t = 2000;
    let flat = BASE.replace(
        "nu = { form = \"growing\", a = 1.0, b = 0.1, p = 0.3 }",
        "nu = { form = \"constant\", a = 1.0 }",
    );
    let exp = experiment_from(&flat, dir.path());
    let (ledger, budget) = exp.ledger(Variant::Alg1, t).unwrap().unwrap();
    assert!(ledger.budget_tail_estimate(&budget, t).is_none());

    let geo = BASE
        .replace("variant = \"alg1\"", "variant = \"pdop_alg1\"")
        .replace("[run]", "[pdop]\nmatch_budget = false\n\n[run]");
    let exp = experiment_from(&geo, dir.path());
    let (ledger, budget) = exp.ledger(Variant::PdopAlg1, t).unwrap().unwrap();
    let tail = ledger
        .budget_tail_estimate(&budget, t)
        .expect("geometric terms are summable");
    assert!(tail.is_finite() && tail >= 0.0);
    assert!(budget.total().is_finite());
}
