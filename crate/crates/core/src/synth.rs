//! Synthetic sensor datasets with planted rules, plus a small property graph
//! bound to the generated sensors.
//!
//! Every cell is drawn at random, then each planted rule is enforced on the
//! rows where its antecedent holds: exactly `round(confidence * m)` of those
//! `m` rows receive the consequent class and the rest receive another class.
//! Optional noise resamples cells afterwards. Each planted rule's confidence
//! is measured on the final table and must lie within
//! [`CONFIDENCE_TOLERANCE`] of its target.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{ExtractError, Item, Rule, RuleRecord};
use crate::graph::{Binding, Edge, GraphBundle, GraphError, Node, Ontology, PropValue, PropertyGraph};
use crate::quality::RuleCounts;
use crate::transact::{Feature, FeatureKind, Reading, SensorSeries, TransactError, TransactionTable};

/// Largest allowed gap between a planted rule's target and measured confidence.
pub const CONFIDENCE_TOLERANCE: f64 = 0.03;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("planted rules {first} and {second} conflict: {reason}")]
    Conflict {
        first: usize,
        second: usize,
        reason: String,
    },
    #[error("planted rule {rule} measured confidence {measured} but targets {target}")]
    Unsatisfiable {
        rule: usize,
        target: f64,
        measured: f64,
    },
    #[error(transparent)]
    Transact(#[from] TransactError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Rule(#[from] ExtractError),
}

/// A rule to plant, by feature and class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub antecedent: Vec<Item>,
    pub consequent: Item,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub features: usize,
    pub classes: usize,
    pub rows: usize,
    pub planted: Vec<PlantedRule>,
    /// Per-cell probability of resampling after rules are enforced.
    pub noise_rate: f64,
    /// Probability that a free cell takes class 0 instead of a uniform draw.
    pub skew: f64,
    /// Redraw rows until at least one planted antecedent holds, so the
    /// planted rules cover every row.
    pub cover_rows: bool,
    /// Emit numeric readings (class index times 10 plus jitter in [0, 1)).
    pub numeric: bool,
    pub start_timestamp: i64,
    pub interval_seconds: i64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let rule = |a: usize, c: usize, class: usize| PlantedRule {
            antecedent: vec![Item::new(a, class)],
            consequent: Item::new(c, class),
            confidence: 1.0,
        };
        Self {
            features: 10,
            classes: 4,
            rows: 5000,
            planted: vec![rule(0, 1, 0), rule(2, 3, 1), rule(4, 5, 2)],
            noise_rate: 0.0,
            skew: 0.0,
            cover_rows: false,
            numeric: false,
            start_timestamp: 1_700_000_000,
            interval_seconds: 60,
            seed: 0,
        }
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Sensor id of feature `index`, zero padded so ids sort by index.
pub fn sensor_name(index: usize, features: usize) -> String {
    format!("s{index:0w$}", w = digits(features))
}

/// Categorical value of class `index`, zero padded so values sort by index.
pub fn class_name(index: usize, classes: usize) -> String {
    format!("c{index:0w$}", w = digits(classes))
}

fn compatible(a: &[Item], b: &[Item]) -> bool {
    a.iter()
        .all(|x| b.iter().all(|y| x.feature != y.feature || x.class == y.class))
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.features < 2 {
            return bad("at least 2 features are required".into());
        }
        if self.classes < 2 {
            return bad("at least 2 classes are required".into());
        }
        if self.rows == 0 {
            return bad("row count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise rate {} outside [0, 1]", self.noise_rate));
        }
        if !(0.0..1.0).contains(&self.skew) {
            return bad(format!("skew {} outside [0, 1)", self.skew));
        }
        if self.interval_seconds <= 0 {
            return bad("interval must be positive".into());
        }
        if self.cover_rows && self.planted.is_empty() {
            return bad("covering rows requires at least one planted rule".into());
        }
        for (k, p) in self.planted.iter().enumerate() {
            if !(p.confidence > 0.0 && p.confidence <= 1.0) {
                return bad(format!("planted rule {k} confidence {} outside (0, 1]", p.confidence));
            }
            if p.items().any(|i| i.feature >= self.features || i.class >= self.classes) {
                return bad(format!("planted rule {k} references a missing feature or class"));
            }
            Rule::new(p.antecedent.clone(), p.consequent)
                .map_err(|e| SynthError::InvalidSpec(format!("planted rule {k}: {e}")))?;
        }
        for (i, a) in self.planted.iter().enumerate() {
            for (j, b) in self.planted.iter().enumerate().skip(i + 1) {
                let conflict = |reason: &str| SynthError::Conflict {
                    first: i,
                    second: j,
                    reason: reason.into(),
                };
                let feeds = |x: &PlantedRule, y: &PlantedRule| {
                    y.antecedent.iter().any(|it| it.feature == x.consequent.feature)
                };
                if feeds(a, b) || feeds(b, a) {
                    return Err(conflict("a consequent feature appears in the other antecedent"));
                }
                let same_target = a.consequent == b.consequent
                    && a.confidence == 1.0
                    && b.confidence == 1.0;
                if a.consequent.feature == b.consequent.feature
                    && compatible(&a.antecedent, &b.antecedent)
                    && !same_target
                {
                    return Err(conflict(
                        "antecedents can hold together but require different consequents",
                    ));
                }
            }
        }
        Ok(())
    }
}

impl PlantedRule {
    fn items(&self) -> impl Iterator<Item = &Item> {
        self.antecedent.iter().chain(std::iter::once(&self.consequent))
    }
}

/// A generated dataset in every form the pipeline consumes.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Ground-truth table, one categorical feature per sensor, every class declared.
    pub table: TransactionTable,
    pub series: SensorSeries,
    pub graph: GraphBundle,
    /// Measured confidence of each planted rule on `table`.
    pub measured_confidence: Vec<f64>,
}

impl SyntheticData {
    /// Planted rules as name-based records, resolvable against any table
    /// built from `series`.
    pub fn planted_records(&self, spec: &SyntheticSpec) -> Vec<RuleRecord> {
        spec.planted
            .iter()
            .map(|p| {
                let rule = Rule::new(p.antecedent.clone(), p.consequent)
                    .expect("validated planted rule");
                RuleRecord::from_rule(&rule, self.table.features())
            })
            .collect()
    }
}

fn draw(rng: &mut ChaCha8Rng, classes: usize, skew: f64) -> usize {
    if skew > 0.0 && rng.random::<f64>() < skew {
        0
    } else {
        rng.random_range(0..classes)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (nf, nc) = (spec.features, spec.classes);
    let covered = |row: &[usize]| {
        spec.planted
            .iter()
            .any(|p| p.antecedent.iter().all(|i| row[i.feature] == i.class))
    };
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(spec.rows);
    let mut attempts = 0usize;
    while rows.len() < spec.rows {
        attempts += 1;
        if attempts > spec.rows.saturating_mul(1000) {
            return Err(SynthError::InvalidSpec(
                "planted antecedents are too rare to cover every row".into(),
            ));
        }
        let row: Vec<usize> = (0..nf).map(|_| draw(&mut rng, nc, spec.skew)).collect();
        if !spec.cover_rows || covered(&row) {
            rows.push(row);
        }
    }

    for p in &spec.planted {
        let mut hits: Vec<usize> = (0..rows.len())
            .filter(|&r| p.antecedent.iter().all(|i| rows[r][i.feature] == i.class))
            .collect();
        hits.shuffle(&mut rng);
        let keep = (p.confidence * hits.len() as f64).round() as usize;
        let target = p.consequent;
        for (k, &r) in hits.iter().enumerate() {
            rows[r][target.feature] = if k < keep {
                target.class
            } else {
                // uniform over the other classes
                let c = rng.random_range(0..nc - 1);
                if c >= target.class {
                    c + 1
                } else {
                    c
                }
            };
        }
    }

    if spec.noise_rate > 0.0 {
        for row in &mut rows {
            for cell in row.iter_mut() {
                if rng.random::<f64>() < spec.noise_rate {
                    *cell = draw(&mut rng, nc, spec.skew);
                }
            }
        }
    }

    let features: Vec<Feature> = (0..nf)
        .map(|f| Feature {
            name: sensor_name(f, nf),
            kind: FeatureKind::Categorical,
            class_values: (0..nc).map(|c| class_name(c, nc)).collect(),
        })
        .collect();
    let table = TransactionTable::new(features, rows, BTreeMap::new())?;

    let mut measured = Vec::with_capacity(spec.planted.len());
    for (k, p) in spec.planted.iter().enumerate() {
        let rule = Rule::new(p.antecedent.clone(), p.consequent)?;
        let counts = RuleCounts::of(&rule, &table);
        if counts.antecedent == 0 {
            return Err(SynthError::InvalidSpec(format!(
                "antecedent of planted rule {k} never occurs"
            )));
        }
        let c = counts.confidence();
        if (c - p.confidence).abs() > CONFIDENCE_TOLERANCE {
            return Err(SynthError::Unsatisfiable {
                rule: k,
                target: p.confidence,
                measured: c,
            });
        }
        measured.push(c);
    }

    let mut readings = Vec::with_capacity(spec.rows * nf);
    for (r, row) in table.rows().iter().enumerate() {
        let ts = spec.start_timestamp + spec.interval_seconds * r as i64;
        for (f, &c) in row.iter().enumerate() {
            let value = if spec.numeric {
                Reading::Num(c as f64 * 10.0 + rng.random::<f64>())
            } else {
                Reading::Cat(class_name(c, nc))
            };
            readings.push((sensor_name(f, nf), ts, value));
        }
    }
    let series = SensorSeries::from_readings(readings)?;
    let graph = network_graph(nf)?;
    Ok(SyntheticData {
        table,
        series,
        graph,
        measured_confidence: measured,
    })
}

fn set<const N: usize>(items: [&str; N]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// A chain of alternating pipes and junctions, one node per sensor.
fn network_graph(sensors: usize) -> Result<GraphBundle, GraphError> {
    let ontology = Ontology::new(
        set(["Junction", "Pipe"]),
        BTreeMap::from([
            ("feeds".to_string(), ("Pipe".to_string(), "Junction".to_string())),
            ("supplies".to_string(), ("Junction".to_string(), "Pipe".to_string())),
        ]),
        set(["diameter", "elevation", "length"]),
        BTreeMap::from([
            ("Pipe".to_string(), set(["diameter", "length"])),
            ("Junction".to_string(), set(["elevation"])),
        ]),
    )?;
    let node_id = |i: usize| format!("n{i:0w$}", w = digits(sensors));
    let mut nodes = BTreeMap::new();
    for i in 0..sensors {
        let node = if i % 2 == 0 {
            Node {
                labels: set(["Pipe"]),
                props: BTreeMap::from([
                    ("length".to_string(), PropValue::from(100.0 * (i + 1) as f64)),
                    ("diameter".to_string(), PropValue::from(0.1 + 0.05 * (i % 3) as f64)),
                ]),
            }
        } else {
            Node {
                labels: set(["Junction"]),
                props: BTreeMap::from([("elevation".to_string(), PropValue::from(10.0 + i as f64))]),
            }
        };
        nodes.insert(node_id(i), node);
    }
    let mut edges = BTreeMap::new();
    for i in 1..sensors {
        let relation = if i % 2 == 1 { "feeds" } else { "supplies" };
        edges.insert(
            format!("e{i:0w$}", w = digits(sensors)),
            Edge {
                from: node_id(i - 1),
                to: node_id(i),
                labels: set([relation]),
                props: BTreeMap::new(),
            },
        );
    }
    let graph = PropertyGraph::new(nodes, edges)?;
    let binding = Binding::new(
        (0..sensors)
            .map(|i| (sensor_name(i, sensors), node_id(i)))
            .collect(),
        &graph,
    )?;
    Ok(GraphBundle {
        graph,
        ontology,
        binding,
    })
}
