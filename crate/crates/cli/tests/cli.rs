use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgarm_core::autonet::{Dense, TrainedAutoencoder};
use kgarm_core::baseline::brute_force_implications;
use kgarm_core::extract::RuleRecord;
use kgarm_core::quality::RuleQualityReport;
use kgarm_core::transact::{build_transactions, read_sensor_csv};
use serde_json::Value;
use tempfile::TempDir;

fn kgarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgarm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kgarm(args);
    assert!(
        out.status.success(),
        "kgarm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rules(dir: &Path) -> Vec<RuleRecord> {
    serde_json::from_str(&fs::read_to_string(dir.join("rules.json")).unwrap()).unwrap()
}

fn report(dir: &Path) -> RuleQualityReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Synthetic data plus a short training run, shared by several tests.
struct Trained {
    root: TempDir,
}

impl Trained {
    fn new(extra_train: &[&str]) -> Self {
        let root = TempDir::new().unwrap();
        let data = root.path().join("data");
        ok(&[
            "synth", "--out", p(&data), "--features", "6", "--classes", "3", "--rows", "600",
            "--seed", "4",
        ]);
        let model = root.path().join("model");
        let (csv, graph) = (data.join("sensors.csv"), data.join("graph.json"));
        let mut args = vec![
            "train",
            "--out",
            p(&model),
            "--csv",
            p(&csv),
            "--graph",
            p(&graph),
            "--epochs",
            "5",
            "--seed",
            "1",
        ];
        args.extend_from_slice(extra_train);
        ok(&args);
        Self { root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

#[test]
fn full_flow_writes_every_artifact() {
    let t = Trained::new(&[]);
    for f in ["sensors.csv", "graph.json", "synth.json", "planted.json"] {
        assert!(t.path("data").join(f).is_file(), "{f}");
    }
    for f in ["model.json", "manifest.json"] {
        assert!(t.path("model").join(f).is_file(), "{f}");
    }
    let mined = t.path("mined");
    ok(&["mine", "--model", p(&t.path("model")), "--out", p(&mined)]);
    let base = t.path("base");
    ok(&[
        "baseline", "--model", p(&t.path("model")), "--out", p(&base), "--min-support", "0.05",
    ]);
    for dir in [&mined, &base] {
        for f in ["rules.json", "report.json", "report.txt"] {
            assert!(dir.join(f).is_file(), "{}", dir.join(f).display());
        }
    }
    let cmp = t.path("cmp");
    let text = ok(&[
        "compare",
        "--left",
        p(&mined.join("report.json")),
        "--right",
        p(&base.join("report.json")),
        "--labels",
        "aerial,fpgrowth",
        "--out",
        p(&cmp),
    ]);
    assert!(text.contains("aerial") && text.contains("fpgrowth"));
    assert!(text.contains("time.extract (s)") && text.contains("time.mine (s)"));
    assert!(cmp.join("comparison.json").is_file());
}

#[test]
fn mining_is_byte_identical_across_runs() {
    let t = Trained::new(&[]);
    let a = t.path("a");
    let b = t.path("b");
    ok(&["mine", "--model", p(&t.path("model")), "--out", p(&a)]);
    ok(&["mine", "--model", p(&t.path("model")), "--out", p(&b), "--parallel"]);
    assert_eq!(
        fs::read(a.join("rules.json")).unwrap(),
        fs::read(b.join("rules.json")).unwrap()
    );
}

#[test]
fn training_is_reproducible_for_a_seed() {
    let a = Trained::new(&[]);
    let b = Trained::new(&[]);
    assert_eq!(
        fs::read(a.path("model").join("model.json")).unwrap(),
        fs::read(b.path("model").join("model.json")).unwrap()
    );
}

#[test]
fn strict_threshold_on_untrained_model_gives_no_rules() {
    let t = Trained::new(&[]);
    let model = t.path("model");
    let net = TrainedAutoencoder::from_json(&fs::read_to_string(model.join("model.json")).unwrap())
        .unwrap();
    let fresh = TrainedAutoencoder::initialize(net.shape().clone(), net.config().clone());
    fs::write(model.join("model.json"), fresh.to_json()).unwrap();
    let out = t.path("out");
    ok(&[
        "mine", "--model", p(&model), "--out", p(&out), "--similarity-threshold", "0.99",
    ]);
    assert!(rules(&out).is_empty());
    assert_eq!(report(&out).aggregate.rule_count, 0);
}

#[test]
fn missing_csv_is_a_one_line_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = kgarm(&[
        "train",
        "--csv",
        p(&dir.path().join("absent.csv")),
        "--out",
        p(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: usage: "), "{stderr}");
    assert!(stderr.contains("absent.csv"));
}

#[test]
fn bad_flags_and_bad_data_have_distinct_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = kgarm(&["mine", "--similarity-threshold", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(String::from_utf8(bad.stderr).unwrap().trim_end().lines().count(), 1);

    let csv = dir.path().join("x.csv");
    fs::write(&csv, "timestamp,sensor_id,value\nnot-a-time,s0,1\n").unwrap();
    let out = kgarm(&["train", "--csv", p(&csv), "--out", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: data: "));
}

#[test]
fn mismatched_csv_is_rejected_at_mining() {
    let t = Trained::new(&[]);
    let other = t.path("other");
    ok(&["synth", "--out", p(&other), "--features", "7", "--classes", "3", "--rows", "300"]);
    let out = kgarm(&[
        "mine",
        "--model",
        p(&t.path("model")),
        "--csv",
        p(&other.join("sensors.csv")),
        "--out",
        p(&t.path("x")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("manifest/table layout mismatch"), "{stderr}");
}

#[test]
fn enriched_features_extend_the_plain_ones() {
    let plain = Trained::new(&[]);
    let rich = Trained::new(&["--enrich"]);
    let names = |t: &Trained| -> BTreeSet<String> {
        let m: Value = serde_json::from_str(
            &fs::read_to_string(t.path("model").join("manifest.json")).unwrap(),
        )
        .unwrap();
        m["features"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["name"].as_str().unwrap().to_string())
            .collect()
    };
    let (a, b) = (names(&plain), names(&rich));
    assert!(a.is_subset(&b));
    assert!(b.len() > a.len());
}

#[test]
fn coupled_baseline_uses_half_the_mean_support() {
    let t = Trained::new(&[]);
    let mined = t.path("mined");
    ok(&[
        "mine", "--model", p(&t.path("model")), "--out", p(&mined), "--similarity-threshold",
        "0.5",
    ]);
    let aerial = rules(&mined);
    assert!(!aerial.is_empty(), "fixture must produce rules");
    let mean = aerial.iter().map(|r| r.support.unwrap()).sum::<f64>() / aerial.len() as f64;
    let base = t.path("base");
    ok(&[
        "baseline",
        "--model",
        p(&t.path("model")),
        "--coupled",
        "--aerial-rules",
        p(&mined.join("rules.json")),
        "--out",
        p(&base),
    ]);
    let settings: Value =
        serde_json::from_str(&fs::read_to_string(base.join("baseline.json")).unwrap()).unwrap();
    let used = settings["min_support"].as_f64().unwrap();
    assert!((used - mean / 2.0).abs() < 1e-12, "{used} vs {}", mean / 2.0);
    assert!(rules(&base).iter().all(|r| r.support.unwrap() >= used - 1e-12));
}

#[test]
fn baseline_matches_exhaustive_enumeration() {
    let t = Trained::new(&[]);
    let csv = t.path("data").join("sensors.csv");
    let base = t.path("base");
    ok(&[
        "baseline", "--csv", p(&csv), "--out", p(&base), "--min-support", "0.1",
        "--min-confidence", "0.6",
    ]);
    let series = read_sensor_csv(fs::File::open(&csv).unwrap()).unwrap();
    let table = build_transactions(&series, None, 10).unwrap();
    let expected: BTreeSet<String> = brute_force_implications(&table, 0.1, 0.6, 2)
        .unwrap()
        .iter()
        .map(|r| r.rule.render(table.features()))
        .collect();
    let got: BTreeSet<String> = rules(&base)
        .iter()
        .map(|r| r.to_rule(&table).unwrap().render(table.features()))
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(got, expected);
}

#[test]
fn comparing_a_report_with_itself_has_zero_deltas() {
    let t = Trained::new(&[]);
    let mined = t.path("mined");
    ok(&["mine", "--model", p(&t.path("model")), "--out", p(&mined)]);
    let r = mined.join("report.json");
    let text = ok(&["compare", "--left", p(&r), "--right", p(&r)]);
    for line in text.lines().skip(1) {
        let delta = line.split_whitespace().last().unwrap();
        assert_eq!(delta.parse::<f64>().unwrap(), 0.0, "{line}");
    }
}

/// Two sensors: `f1` in {a, b}, `f2` in {c, d, e}.
fn two_sensor_csv(dir: &Path) -> PathBuf {
    let mut text = String::from("timestamp,sensor_id,value\n");
    let pairs = [("a", "c"), ("a", "c"), ("b", "d"), ("b", "e"), ("a", "c"), ("b", "d")];
    for (t, (x, y)) in pairs.iter().enumerate() {
        text.push_str(&format!("{t},f1,{x}\n{t},f2,{y}\n"));
    }
    let path = dir.join("two.csv");
    fs::write(&path, text).unwrap();
    path
}

fn dense(in_dim: usize, out_dim: usize, entries: &[(usize, usize, f64)], bias: &[f64]) -> Dense {
    let mut weights = vec![0.0; in_dim * out_dim];
    for &(o, i, w) in entries {
        weights[o * in_dim + i] = w;
    }
    let mut b = vec![0.0; out_dim];
    b[..bias.len()].copy_from_slice(bias);
    Dense { in_dim, out_dim, weights, bias: b }
}

#[test]
fn hand_built_network_yields_exactly_one_rule() {
    let dir = TempDir::new().unwrap();
    let csv = two_sensor_csv(dir.path());
    let model = dir.path().join("model");
    ok(&["train", "--csv", p(&csv), "--out", p(&model), "--epochs", "1"]);
    let trained =
        TrainedAutoencoder::from_json(&fs::read_to_string(model.join("model.json")).unwrap())
            .unwrap();
    assert_eq!(trained.shape().widths(), [5, 3, 2, 2, 2, 3, 5]);
    // A single hidden unit carries tanh(5 (x_a - x_b)) through every layer.
    let layers = vec![
        dense(5, 3, &[(0, 0, 5.0), (0, 1, -5.0)], &[]),
        dense(3, 2, &[(0, 0, 3.0)], &[]),
        dense(2, 2, &[(0, 0, 3.0)], &[]),
        dense(2, 2, &[(0, 0, 3.0)], &[]),
        dense(2, 3, &[(0, 0, 3.0)], &[]),
        dense(3, 5, &[(0, 0, 2.0), (1, 0, -2.0), (2, 0, 3.0)], &[]),
    ];
    let net =
        TrainedAutoencoder::from_layers(trained.shape().clone(), layers, trained.config().clone())
            .unwrap();
    fs::write(model.join("model.json"), net.to_json()).unwrap();
    let out = dir.path().join("out");
    ok(&["mine", "--model", p(&model), "--out", p(&out), "--similarity-threshold", "0.8"]);
    let found: Vec<String> = rules(&out)
        .iter()
        .map(|r| {
            let ante: Vec<String> =
                r.antecedent.iter().map(|i| format!("{}={}", i.feature, i.class)).collect();
            format!("{} -> {}={}", ante.join(","), r.consequent.feature, r.consequent.class)
        })
        .collect();
    assert_eq!(found, vec!["f1=a -> f2=c".to_string()]);
    let q = &report(&out).per_rule[0];
    assert_eq!(q.support, 0.5);
    assert_eq!(q.confidence, 1.0);
}
