use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kgarm_core::autonet::{train, NetworkShape, TrainedAutoencoder};
use kgarm_core::baseline::{coupled_support_threshold, mine_rules};
use kgarm_core::extract::{
    extract_rules, extract_rules_parallel, ExtractionConfig, Rule, RuleRecord,
};
use kgarm_core::quality::{evaluate, AggregateQuality, RuleQualityReport};
use kgarm_core::synth::{generate, SynthError, SyntheticSpec};
use kgarm_core::transact::{one_hot_encode, write_sensor_csv, TransactionTable};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{data, ensure_dir, read_input, write_output, CliError};
use crate::pipeline::{Manifest, PipelineSpec, MANIFEST_FILE, MODEL_FILE};

pub const RULES_FILE: &str = "rules.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
    out
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = RunConfig::required(&cfg.out, "out")?;
    ensure_dir(dir)?;
    Ok(dir)
}

pub fn synth(cfg: &RunConfig) -> Result<String, CliError> {
    let dir = out_dir(cfg)?;
    let spec = SyntheticSpec {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let generated = generate(&spec).map_err(|e| match e {
        SynthError::InvalidSpec(_) | SynthError::Conflict { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    })?;
    let mut csv = Vec::new();
    write_sensor_csv(&generated.series, &mut csv)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    write_output(
        &dir.join("sensors.csv"),
        std::str::from_utf8(&csv).expect("csv output is utf-8"),
    )?;
    write_output(&dir.join("graph.json"), &(generated.graph.to_json_string() + "\n"))?;
    write_output(&dir.join("synth.json"), &to_json(&spec))?;
    write_output(&dir.join("planted.json"), &to_json(&generated.planted_records(&spec)))?;
    Ok(format!(
        "wrote {} rows x {} sensors to {}; planted confidences {:?}",
        spec.rows,
        spec.features,
        dir.display(),
        generated.measured_confidence
    ))
}

pub fn train_model(cfg: &RunConfig) -> Result<String, CliError> {
    let dir = out_dir(cfg)?;
    let mut timings = BTreeMap::new();
    let pipeline = PipelineSpec::from_config(cfg)?;
    let table = timed(&mut timings, "build", || pipeline.build())?;
    let matrix = one_hot_encode(&table).map_err(|e| CliError::Internal(e.to_string()))?;
    let shape = NetworkShape::default_for(table.layout()).map_err(data("network shape"))?;
    let config = cfg.training_config();
    let net = timed(&mut timings, "train", || train(&matrix, shape, config.clone()))
        .map_err(data("training"))?;
    let manifest = Manifest {
        features: table.features().to_vec(),
        bin_edges: table.bin_edges().clone(),
        pipeline,
        training: config,
        seed: cfg.seed,
        rows: table.n_rows(),
        epoch_losses: net.epoch_losses().to_vec(),
        final_loss: net.final_loss(),
        timings,
    };
    write_output(&dir.join(MODEL_FILE), &(net.to_json() + "\n"))?;
    write_output(&dir.join(MANIFEST_FILE), &to_json(&manifest))?;
    Ok(format!(
        "trained on {} rows, {} features, final loss {:.6}; wrote {}",
        table.n_rows(),
        table.n_features(),
        net.final_loss().unwrap_or(f64::NAN),
        dir.display()
    ))
}

fn load_model(dir: &Path) -> Result<(TrainedAutoencoder, Manifest), CliError> {
    let manifest = Manifest::load(dir)?;
    let path = dir.join(MODEL_FILE);
    let net = TrainedAutoencoder::from_json(&read_input(&path)?).map_err(data(path.display()))?;
    Ok((net, manifest))
}

/// Table for a command that may reuse a trained model's pipeline.
fn table_for(cfg: &RunConfig, manifest: Option<&Manifest>) -> Result<TransactionTable, CliError> {
    let pipeline = match manifest {
        Some(m) => {
            let mut p = m.pipeline.clone();
            if let Some(csv) = &cfg.csv {
                p.csv = csv.clone();
            }
            if let Some(graph) = &cfg.graph {
                p.graph = Some(graph.clone());
            }
            p
        }
        None => PipelineSpec::from_config(cfg)?,
    };
    let table = pipeline.build()?;
    if let Some(m) = manifest {
        m.check_table(&table)?;
    }
    Ok(table)
}

fn extraction_config(cfg: &RunConfig, table: &TransactionTable) -> Result<ExtractionConfig, CliError> {
    let markable = match &cfg.markable_features {
        None => None,
        Some(names) => Some(
            names
                .iter()
                .map(|n| {
                    table
                        .feature_index(n)
                        .ok_or_else(|| CliError::Usage(format!("unknown markable feature `{n}`")))
                })
                .collect::<Result<BTreeSet<usize>, _>>()?,
        ),
    };
    Ok(ExtractionConfig {
        similarity_threshold: cfg.similarity_threshold,
        max_antecedents: cfg.max_antecedents,
        markable_features: markable,
    })
}

fn write_report(
    dir: &Path,
    report: &RuleQualityReport,
) -> Result<(), CliError> {
    write_output(&dir.join(RULES_FILE), &to_json(&report.records()))?;
    write_output(&dir.join(REPORT_FILE), &to_json(report))?;
    write_output(&dir.join(REPORT_TEXT_FILE), &report.render_table())
}

pub fn mine(cfg: &RunConfig) -> Result<String, CliError> {
    let model_dir = RunConfig::required(&cfg.model, "model")?;
    let (net, manifest) = load_model(model_dir)?;
    let dir = out_dir(cfg)?;
    let mut timings = BTreeMap::new();
    let table = timed(&mut timings, "build", || table_for(cfg, Some(&manifest)))?;
    if net.layout() != &table.layout() {
        return Err(CliError::Data(
            "manifest/table layout mismatch: model layout differs from the table".into(),
        ));
    }
    let config = extraction_config(cfg, &table)?;
    let rules = timed(&mut timings, "extract", || {
        if cfg.parallel {
            extract_rules_parallel(&net, &config)
        } else {
            extract_rules(&net, &config)
        }
    })
    .map_err(data("extraction"))?;
    let mut report = timed(&mut timings, "evaluate", || evaluate(&rules, &table));
    if let Some(t) = manifest.timings.get("train") {
        timings.insert("train".into(), *t);
    }
    report.timings = timings;
    write_report(dir, &report)?;
    Ok(report.render_table())
}

#[derive(Serialize)]
struct BaselineSettings {
    min_support: f64,
    coupled: bool,
    min_confidence: f64,
    max_antecedents: usize,
}

pub fn baseline(cfg: &RunConfig) -> Result<String, CliError> {
    let manifest = cfg.model.as_deref().map(Manifest::load).transpose()?;
    let dir = out_dir(cfg)?;
    let mut timings = BTreeMap::new();
    let table = timed(&mut timings, "build", || table_for(cfg, manifest.as_ref()))?;
    let min_support = if cfg.coupled {
        let path = RunConfig::required(&cfg.aerial_rules, "aerial-rules")?;
        let records: Vec<RuleRecord> =
            serde_json::from_str(&read_input(path)?).map_err(data(path.display()))?;
        let rules = records
            .iter()
            .map(|r| r.to_rule(&table))
            .collect::<Result<Vec<Rule>, _>>()
            .map_err(data(path.display()))?;
        coupled_support_threshold(&rules, &table).map_err(data(path.display()))?
    } else {
        cfg.min_support.ok_or_else(|| {
            CliError::Usage("either --min-support or --coupled is required".into())
        })?
    };
    let mined = timed(&mut timings, "mine", || {
        mine_rules(&table, min_support, cfg.min_confidence, cfg.max_antecedents)
    })
    .map_err(data("baseline"))?;
    let rules: Vec<Rule> = mined.into_iter().map(|r| r.rule).collect();
    let mut report = timed(&mut timings, "evaluate", || evaluate(&rules, &table));
    report.timings = timings;
    write_report(dir, &report)?;
    write_output(
        &dir.join("baseline.json"),
        &to_json(&BaselineSettings {
            min_support,
            coupled: cfg.coupled,
            min_confidence: cfg.min_confidence,
            max_antecedents: cfg.max_antecedents,
        }),
    )?;
    Ok(format!("min_support {min_support}\n{}", report.render_table()))
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub labels: [String; 2],
    pub runs: [usize; 2],
    pub aggregates: [AggregateQuality; 2],
    pub timings: [BTreeMap<String, f64>; 2],
}

fn load_side(paths: &[PathBuf]) -> Result<(AggregateQuality, BTreeMap<String, f64>), CliError> {
    let mut aggregates = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for p in paths {
        let report: RuleQualityReport = serde_json::from_str(&read_input(p)?)
            .map_err(|e| CliError::Data(format!("{}: not a rule report: {e}", p.display())))?;
        for (k, v) in &report.timings {
            let e = sums.entry(k.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
        aggregates.push(report.aggregate);
    }
    let timings = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    Ok((AggregateQuality::macro_mean(&aggregates), timings))
}

pub fn compare(
    left: &[PathBuf],
    right: &[PathBuf],
    labels: [String; 2],
    out: Option<&Path>,
) -> Result<String, CliError> {
    if left.is_empty() || right.is_empty() {
        return Err(CliError::Usage("compare needs at least one report per side".into()));
    }
    let (l, lt) = load_side(left)?;
    let (r, rt) = load_side(right)?;
    let rows: [(&str, f64, f64); 6] = [
        ("rule_count", l.rule_count as f64, r.rule_count as f64),
        ("mean_support", l.mean_support, r.mean_support),
        ("mean_confidence", l.mean_confidence, r.mean_confidence),
        ("mean_coverage", l.mean_coverage, r.mean_coverage),
        ("data_coverage", l.data_coverage, r.data_coverage),
        ("mean_zhang", l.mean_zhang, r.mean_zhang),
    ];
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<18} {:>12} {:>12} {:>12}",
        "metric", labels[0], labels[1], "delta"
    );
    for (name, a, b) in rows {
        let _ = writeln!(text, "{name:<18} {a:>12.4} {b:>12.4} {:>12.4}", a - b);
    }
    let stages: BTreeSet<&String> = lt.keys().chain(rt.keys()).collect();
    for stage in stages {
        let a = lt.get(stage).copied().unwrap_or(f64::NAN);
        let b = rt.get(stage).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            text,
            "{:<18} {a:>12.4} {b:>12.4} {:>12.4}",
            format!("time.{stage} (s)"),
            a - b
        );
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let comparison = Comparison {
            labels,
            runs: [left.len(), right.len()],
            aggregates: [l, r],
            timings: [lt, rt],
        };
        write_output(&dir.join("comparison.json"), &to_json(&comparison))?;
    }
    Ok(text)
}
