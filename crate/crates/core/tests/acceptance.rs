//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mddm::acts::{enumerate_combination_table, DialogueAct, Function};
use mddm::errormodel::{corrupt, ErrorConfig};
use mddm::harness::{train, ExperimentSpec, TrainingResult, Variant};
use mddm::ontology::{Ontology, Slot};
use mddm::policy::{compute_returns, LinearQPolicy, TrainingConfig};
use mddm::state::{BeliefState, FeatureSet, FeatureVector, NBestList, UserActHypothesis};

const BIN: &str = env!("CARGO_BIN_EXE_mddm");

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of paired differences and its standard error.
fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    (m, (var / d.len() as f64).sqrt())
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let out = Command::new(BIN).arg("enumerate-combinations").output().expect("run mddm");
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let mut got: Vec<(String, usize)> = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        got.push((cols[0].to_string(), cols[3].parse().expect("count column")));
    }
    let want: Vec<(String, usize)> = [("0", 10), ("1", 1), ("2", 4), ("3", 4), ("4", 4), ("5", 2), ("6", 4), ("null", 1)]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    let lib = enumerate_combination_table();
    let ok = out.status.success()
        && got == want
        && lib.counts == [10, 1, 4, 4, 4, 2, 4]
        && lib.null == 1
        && elapsed < Duration::from_secs(1);
    r.line(1, ok, format!("combination table {got:?} in {:.3}s", elapsed.as_secs_f64()));
}

fn train_variant(variant: Variant, sources: Option<&TrainingResult>) -> TrainingResult {
    let mut spec = ExperimentSpec::new(variant, TrainingConfig::default());
    if let Some(s) = sources {
        spec.source_policies = s.runs.iter().map(|run| run.policies.clone()).collect();
    }
    train(&spec).expect("training succeeds")
}

fn rewards_at(result: &TrainingResult, dialogues: usize) -> Vec<f64> {
    result.run_rewards(dialogues).expect("checkpoint exists")
}

fn criteria_2_to_5(r: &mut Report) {
    let start = Instant::now();
    let one = train_variant(Variant::OneDim, None);
    let multi = train_variant(Variant::MultiDim, None);
    let one_multi_time = start.elapsed();

    let sources = tempfile::tempdir().expect("tempdir");
    for (i, run) in multi.runs.iter().enumerate() {
        run.policies.save_dir(&sources.path().join(format!("run-{i}"))).expect("save sources");
    }
    let transfer = train_variant(Variant::MultiDimTransfer, Some(&multi));

    let last = one.curve.last().expect("curve");
    let ok = last.mean_success >= 0.90 && last.mean_reward >= 15.0 && (8.0..=14.0).contains(&last.mean_length);
    r.line(
        2,
        ok,
        format!(
            "one-dim final reward {:.2}, success {:.3}, length {:.2} ({:.0}s for one-dim and multi-dim training)",
            last.mean_reward,
            last.mean_success,
            last.mean_length,
            one_multi_time.as_secs_f64()
        ),
    );

    let m40 = multi.curve.at(40_000).expect("40k").mean_reward;
    let m25 = multi.curve.at(25_000).expect("25k").mean_reward;
    let gap = (last.mean_reward - m40).abs();
    let ok = gap <= 3.0 && m25 >= 0.9 * m40;
    r.line(
        3,
        ok,
        format!("final gap {gap:.2} (<= 3), multi-dim 25k {m25:.2} vs 90% of 40k {:.2}", 0.9 * m40),
    );

    let (one5, multi5, transfer5) =
        (rewards_at(&one, 5000), rewards_at(&multi, 5000), rewards_at(&transfer, 5000));
    let (d1, se1) = paired(&one5, &multi5);
    let (d2, se2) = paired(&transfer5, &multi5);
    r.line(
        4,
        d1 > se1 && d2 > se2,
        format!(
            "at 5k one-dim {:.2}, multi-dim {:.2}, transfer {:.2}; one-dim minus multi-dim {d1:.2} (se {se1:.2}), transfer minus multi-dim {d2:.2} (se {se2:.2})",
            mean(&one5),
            mean(&multi5),
            mean(&transfer5)
        ),
    );

    let after = tempfile::tempdir().expect("tempdir");
    let mut identical = true;
    for (i, run) in transfer.runs.iter().enumerate() {
        let dir = after.path().join(format!("run-{i}"));
        run.policies.save_dir(&dir).expect("save transfer");
        let src = sources.path().join(format!("run-{}", i % multi.runs.len()));
        for file in ["autofeedback.json", "social.json"] {
            identical &= same_bytes(&src.join(file), &dir.join(file));
        }
    }
    r.line(5, identical, format!("frozen agent files identical across {} transfer runs", transfer.runs.len()));
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).expect("read") == std::fs::read(b).expect("read")
}

fn direct_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| (t..rewards.len()).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum())
        .collect()
}

fn criterion_6(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=40);
        let gamma = rng.random_range(0.5..=1.0);
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..35.0)).collect();
        let fast = compute_returns(&rewards, gamma).expect("non-empty");
        for (a, b) in fast.iter().zip(direct_returns(&rewards, gamma)) {
            worst = worst.max((a - b).abs());
        }
    }
    let r0 = compute_returns(&[-1.0, -1.0, 29.0], 0.95).expect("non-empty")[0];
    let expected = -1.0 + -0.95 + 0.95 * 0.95 * 29.0;
    let ok = worst <= 1e-9 && (r0 - expected).abs() <= 1e-12 && (r0 - 24.2225).abs() <= 1e-12;
    r.line(6, ok, format!("max deviation {worst:.2e} over 1000 sequences; R_0 of [-1,-1,29] = {r0}"));
}

fn criterion_7(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = FeatureSet::Task;
    let alpha = 0.001;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let actions = 5;
        let mut policy = LinearQPolicy::zeros(set, actions);
        for w in policy.weights.iter_mut().flatten() {
            *w = rng.random_range(-2.0..2.0);
        }
        let phi = FeatureVector { set, values: (0..set.len()).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let a = rng.random_range(0..actions);
        let ret = rng.random_range(-30.0..30.0);

        let mut updated = policy.clone();
        updated.mc_update(&[(&phi, a)], &[ret], alpha).expect("update");
        let step: Vec<f64> = updated.weights[a].iter().zip(&policy.weights[a]).map(|(x, y)| x - y).collect();

        let loss = |p: &LinearQPolicy| 0.5 * (ret - p.q_value(&phi, a).expect("q")).powi(2);
        let h = 1e-5;
        let mut diff_sq = 0.0;
        let mut norm_sq = 0.0;
        for (j, s) in step.iter().enumerate() {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            plus.weights[a][j] += h;
            minus.weights[a][j] -= h;
            let grad = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let expected = -alpha * grad;
            diff_sq += (s - expected).powi(2);
            norm_sq += expected.powi(2);
        }
        worst = worst.max((diff_sq / norm_sq).sqrt());
    }
    r.line(7, worst <= 1e-6, format!("max relative error {worst:.2e} over 100 triples"));
}

fn criterion_8(r: &mut Report) {
    let ontology = Ontology::restaurant();
    let cfg = ErrorConfig { error_rate: 0.2, ..ErrorConfig::default() };
    let acts = [
        DialogueAct::inform(Slot::Foodtype, "thai"),
        DialogueAct::inform(Slot::Area, "north"),
        DialogueAct::request(Slot::Phonenumber),
        DialogueAct::bare(Function::Greet),
        DialogueAct::bare(Function::Bye),
        DialogueAct::bare(Function::Affirm),
        DialogueAct::bare(Function::Deny),
        DialogueAct::new(Function::PropQuestion, vec![mddm::acts::SlotValue::new(Slot::Pricerange, "cheap")]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mut wrong = 0;
    for i in 0..n {
        let act = &acts[i % acts.len()];
        if corrupt(act, &cfg, &ontology, &mut rng).top().act != *act {
            wrong += 1;
        }
    }
    let freq = wrong as f64 / n as f64;
    r.line(8, (freq - 0.2).abs() <= 0.005, format!("top-hypothesis error frequency {freq:.4} over {n} corruptions"));
}

fn single(act: DialogueAct, confidence: f64) -> NBestList {
    NBestList::new(vec![UserActHypothesis { act, confidence }]).expect("valid n-best")
}

fn criterion_9(r: &mut Report) {
    let mut b = BeliefState::default();
    b.update(&single(DialogueAct::inform(Slot::Foodtype, "thai"), 0.8));
    let first = b.slot(Slot::Foodtype).score("thai");
    b.update(&single(DialogueAct::inform(Slot::Foodtype, "thai"), 0.9));
    let second = b.slot(Slot::Foodtype).score("thai");
    let branches = first == Some(0.8) && second.is_some_and(|s| (s - 0.72).abs() <= 1e-12);

    let ontology = Ontology::restaurant();
    let cfg = ErrorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let mut belief = BeliefState::default();
        for _ in 0..rng.random_range(1..12) {
            let slot = mddm::ontology::INFORMABLE[rng.random_range(0..4)];
            let values = ontology.values(slot).expect("informable");
            let value = &values[rng.random_range(0..values.len())];
            belief.update(&corrupt(&DialogueAct::inform(slot, value.as_str()), &cfg, &ontology, &mut rng));
        }
        for slot in mddm::ontology::INFORMABLE {
            worst = worst.max((belief.normalized(slot).total() - 1.0).abs());
        }
    }
    r.line(
        9,
        branches && worst <= 1e-9,
        format!("first {first:?}, repeat {second:?}, max normalization error {worst:.2e}"),
    );
}

fn criterion_10(r: &mut Report) {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut curves = Vec::new();
    let mut slowest = Duration::ZERO;
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let start = Instant::now();
        let status = Command::new(BIN)
            .args(["train", "--variant", "multi-dim", "--seed", "42", "--runs", "2", "--dialogues", "2000", "--out"])
            .arg(&out)
            .output()
            .expect("run mddm");
        slowest = slowest.max(start.elapsed());
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        curves.push(std::fs::read(out.join("curve.csv")).expect("curve.csv"));
    }
    let ok = curves[0] == curves[1] && slowest <= Duration::from_secs(30);
    r.line(10, ok, format!("identical curves: {}, slowest execution {:.1}s", curves[0] == curves[1], slowest.as_secs_f64()));
}

fn main() {
    let mut report = Report { failures: 0 };
    criterion_1(&mut report);
    criteria_2_to_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report);
    criterion_10(&mut report);
    println!("{} of 10 criteria failed", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
