//! Python bindings: graphs, transaction tables, autoencoder training, rule
//! extraction, quality reports, the exhaustive baseline and synthetic data.

use std::fmt::Display;
use std::fs::File;

use kgarm_core::autonet::{train, NetworkShape, TrainedAutoencoder, TrainingConfig};
use kgarm_core::baseline::{coupled_support_threshold, mine_rules};
use kgarm_core::extract::{
    extract_rules, extract_rules_parallel, ExtractionConfig, ItemRecord, RuleRecord,
};
use kgarm_core::graph::{
    load_graph, load_graph_str, sample_sensors, validate_schema, EnrichOptions, GraphBundle,
};
use kgarm_core::quality::{evaluate, RuleQualityReport};
use kgarm_core::synth::{generate, SyntheticSpec};
use kgarm_core::transact::{
    aggregate, build_transactions, one_hot_encode, read_sensor_csv, Enrichment, TransactionTable,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn open(path: &str) -> PyResult<File> {
    File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
}

/// Property graph with its ontology and sensor binding.
#[pyclass(frozen, module = "kgarm")]
struct Graph {
    bundle: GraphBundle,
}

#[pymethods]
impl Graph {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bundle = load_graph(open(path)?).map_err(value_err)?;
        Ok(Self { bundle })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let bundle = load_graph_str(text).map_err(value_err)?;
        Ok(Self { bundle })
    }

    fn to_json(&self) -> String {
        self.bundle.to_json_string()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.bundle.graph.nodes().len()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.bundle.graph.edges().len()
    }

    /// Bound sensor ids in sorted order.
    fn sensors(&self) -> Vec<String> {
        self.bundle.binding.sensors().map(str::to_string).collect()
    }

    /// Undeclared labels and property keys as `(owner, kind, name)`.
    fn violations(&self) -> Vec<(String, String, String)> {
        validate_schema(&self.bundle.graph, &self.bundle.ontology)
            .into_iter()
            .map(|v| {
                let kind = serde_json::to_value(v.kind).expect("kind serializes");
                (v.owner, kind.as_str().unwrap_or_default().to_string(), v.name)
            })
            .collect()
    }

    /// `count` sensors picked by walking the graph from a random start.
    #[pyo3(signature = (count, seed=0))]
    fn sample_sensors(&self, count: usize, seed: u64) -> Vec<String> {
        sample_sensors(&self.bundle.graph, &self.bundle.binding, count, seed)
    }
}

/// Discretized transactions, one categorical column per feature.
#[pyclass(frozen, module = "kgarm")]
struct Table {
    table: TransactionTable,
}

#[pymethods]
impl Table {
    /// Reads a `timestamp,sensor_id,value` CSV and builds transactions,
    /// optionally enriched with graph items.
    #[staticmethod]
    #[pyo3(signature = (
        path, graph=None, enrich=false, depth=1, edge_properties=false,
        intervals=10, window_seconds=None, sensors=None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn from_csv(
        path: &str,
        graph: Option<&Graph>,
        enrich: bool,
        depth: usize,
        edge_properties: bool,
        intervals: usize,
        window_seconds: Option<i64>,
        sensors: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let mut series = read_sensor_csv(open(path)?).map_err(value_err)?;
        if let Some(keep) = &sensors {
            series = series.restrict(keep.iter().map(String::as_str));
        }
        if let Some(w) = window_seconds {
            series = aggregate(&series, w).map_err(value_err)?;
        }
        let enrichment = match (enrich, graph) {
            (false, _) => None,
            (true, None) => return Err(PyValueError::new_err("enrich=True needs a graph")),
            (true, Some(g)) => Some(Enrichment {
                graph: &g.bundle.graph,
                binding: &g.bundle.binding,
                options: EnrichOptions {
                    depth,
                    edge_properties,
                },
            }),
        };
        let table = build_transactions(&series, enrichment, intervals).map_err(value_err)?;
        Ok(Self { table })
    }

    /// Categorical table from string cells; classes are the sorted distinct cells.
    #[staticmethod]
    fn from_labels(names: Vec<String>, rows: Vec<Vec<String>>) -> PyResult<Self> {
        let table = TransactionTable::from_labels(&names, &rows).map_err(value_err)?;
        Ok(Self { table })
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.table.features().iter().map(|f| f.name.clone()).collect()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    fn class_values(&self, feature: &str) -> PyResult<Vec<String>> {
        let f = self
            .table
            .feature_index(feature)
            .ok_or_else(|| PyValueError::new_err(format!("unknown feature `{feature}`")))?;
        Ok(self.table.features()[f].class_values.clone())
    }

    /// Row `index` as class labels.
    fn row(&self, index: usize) -> PyResult<Vec<String>> {
        let row = self
            .table
            .rows()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("row {index} out of range")))?;
        Ok(row
            .iter()
            .zip(self.table.features())
            .map(|(&c, f)| f.class_values[c].clone())
            .collect())
    }

    /// One-hot encoding as a list of rows.
    fn one_hot(&self) -> PyResult<Vec<Vec<f64>>> {
        let m = one_hot_encode(&self.table).map_err(value_err)?;
        Ok((0..m.n_rows()).map(|r| m.row(r).to_vec()).collect())
    }

    fn __len__(&self) -> usize {
        self.table.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "Table(rows={}, features={})",
            self.table.n_rows(),
            self.table.n_features()
        )
    }
}

/// Association rule over feature names and class labels.
#[pyclass(frozen, from_py_object, module = "kgarm")]
#[derive(Clone)]
struct Rule {
    record: RuleRecord,
}

fn item_pair(i: &ItemRecord) -> (String, String) {
    (i.feature.clone(), i.class.clone())
}

fn item_record((feature, class): (String, String)) -> ItemRecord {
    ItemRecord { feature, class }
}

#[pymethods]
impl Rule {
    #[new]
    fn new(antecedent: Vec<(String, String)>, consequent: (String, String)) -> Self {
        Self {
            record: RuleRecord {
                antecedent: antecedent.into_iter().map(item_record).collect(),
                consequent: item_record(consequent),
                support: None,
                confidence: None,
                zhang: None,
            },
        }
    }

    #[getter]
    fn antecedent(&self) -> Vec<(String, String)> {
        self.record.antecedent.iter().map(item_pair).collect()
    }

    #[getter]
    fn consequent(&self) -> (String, String) {
        item_pair(&self.record.consequent)
    }

    #[getter]
    fn support(&self) -> Option<f64> {
        self.record.support
    }

    #[getter]
    fn confidence(&self) -> Option<f64> {
        self.record.confidence
    }

    #[getter]
    fn zhang(&self) -> Option<f64> {
        self.record.zhang
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.record.antecedent == other.record.antecedent
            && self.record.consequent == other.record.consequent
    }

    fn __repr__(&self) -> String {
        let fmt = |i: &ItemRecord| format!("{}={}", i.feature, i.class);
        let lhs: Vec<String> = self.record.antecedent.iter().map(fmt).collect();
        format!("Rule({} -> {})", lhs.join(", "), fmt(&self.record.consequent))
    }
}

fn to_py_rules(records: Vec<RuleRecord>) -> Vec<Rule> {
    records.into_iter().map(|record| Rule { record }).collect()
}

fn resolve(rules: &[Rule], table: &TransactionTable) -> PyResult<Vec<kgarm_core::extract::Rule>> {
    rules
        .iter()
        .map(|r| r.record.to_rule(table).map_err(value_err))
        .collect()
}

/// Trained denoising autoencoder over a table's one-hot layout.
#[pyclass(frozen, module = "kgarm")]
struct Autoencoder {
    net: TrainedAutoencoder,
    features: Vec<kgarm_core::transact::Feature>,
}

#[pymethods]
impl Autoencoder {
    /// Trains on `table`; the GIL is released while training.
    #[staticmethod]
    #[pyo3(signature = (
        table, epochs=5, learning_rate=5e-3, weight_decay=2e-8,
        noise_factor=0.5, batch_size=64, seed=0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        table: &Table,
        epochs: usize,
        learning_rate: f64,
        weight_decay: f64,
        noise_factor: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = TrainingConfig {
            learning_rate,
            epochs,
            weight_decay,
            noise_factor,
            batch_size,
            seed,
        };
        let matrix = one_hot_encode(&table.table).map_err(value_err)?;
        let shape = NetworkShape::default_for(table.table.layout()).map_err(value_err)?;
        let net = py.detach(|| train(&matrix, shape, config)).map_err(value_err)?;
        Ok(Self {
            net,
            features: table.table.features().to_vec(),
        })
    }

    /// Restores a model saved with `to_json`; `table` supplies feature names.
    #[staticmethod]
    fn from_json(text: &str, table: &Table) -> PyResult<Self> {
        let net = TrainedAutoencoder::from_json(text).map_err(value_err)?;
        if net.layout() != &table.table.layout() {
            return Err(PyValueError::new_err("model layout differs from the table"));
        }
        Ok(Self {
            net,
            features: table.table.features().to_vec(),
        })
    }

    fn to_json(&self) -> String {
        self.net.to_json()
    }

    #[getter]
    fn epoch_losses(&self) -> Vec<f64> {
        self.net.epoch_losses().to_vec()
    }

    /// Layer widths, input first.
    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.net.shape().widths().to_vec()
    }

    /// Per-feature probability distributions for a one-hot style input.
    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.net.forward(&input).map_err(value_err)
    }

    #[pyo3(signature = (similarity_threshold=0.8, max_antecedents=2, markable=None, parallel=false))]
    fn extract(
        &self,
        py: Python<'_>,
        similarity_threshold: f64,
        max_antecedents: usize,
        markable: Option<Vec<String>>,
        parallel: bool,
    ) -> PyResult<Vec<Rule>> {
        let markable_features = markable
            .map(|names| {
                names
                    .iter()
                    .map(|n| {
                        self.features
                            .iter()
                            .position(|f| &f.name == n)
                            .ok_or_else(|| PyValueError::new_err(format!("unknown feature `{n}`")))
                    })
                    .collect::<PyResult<_>>()
            })
            .transpose()?;
        let config = ExtractionConfig {
            similarity_threshold,
            max_antecedents,
            markable_features,
        };
        let rules = py
            .detach(|| {
                if parallel {
                    extract_rules_parallel(&self.net, &config)
                } else {
                    extract_rules(&self.net, &config)
                }
            })
            .map_err(value_err)?;
        Ok(to_py_rules(
            rules
                .iter()
                .map(|r| RuleRecord::from_rule(r, &self.features))
                .collect(),
        ))
    }
}

/// Per-rule and aggregate quality of a rule set on a table.
#[pyclass(frozen, module = "kgarm")]
struct Report {
    report: RuleQualityReport,
}

#[pymethods]
impl Report {
    #[getter]
    fn rule_count(&self) -> usize {
        self.report.aggregate.rule_count
    }

    #[getter]
    fn mean_support(&self) -> f64 {
        self.report.aggregate.mean_support
    }

    #[getter]
    fn mean_confidence(&self) -> f64 {
        self.report.aggregate.mean_confidence
    }

    #[getter]
    fn mean_coverage(&self) -> f64 {
        self.report.aggregate.mean_coverage
    }

    #[getter]
    fn mean_zhang(&self) -> f64 {
        self.report.aggregate.mean_zhang
    }

    #[getter]
    fn data_coverage(&self) -> f64 {
        self.report.aggregate.data_coverage
    }

    /// Rules annotated with support, confidence and Zhang's metric.
    fn rules(&self) -> Vec<Rule> {
        to_py_rules(self.report.records())
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes")
    }

    fn render(&self) -> String {
        self.report.render_table()
    }

    fn __repr__(&self) -> String {
        let a = &self.report.aggregate;
        format!(
            "Report(rules={}, support={:.4}, confidence={:.4}, data_coverage={:.4})",
            a.rule_count, a.mean_support, a.mean_confidence, a.data_coverage
        )
    }
}

#[pyfunction(name = "evaluate")]
fn evaluate_py(rules: Vec<Rule>, table: &Table) -> PyResult<Report> {
    let resolved = resolve(&rules, &table.table)?;
    Ok(Report {
        report: evaluate(&resolved, &table.table),
    })
}

/// Every rule meeting both thresholds, found by exhaustive frequent itemset mining.
#[pyfunction]
#[pyo3(signature = (table, min_support, min_confidence=0.8, max_antecedents=2))]
fn mine_baseline(
    py: Python<'_>,
    table: &Table,
    min_support: f64,
    min_confidence: f64,
    max_antecedents: usize,
) -> PyResult<Vec<Rule>> {
    let mined = py
        .detach(|| mine_rules(&table.table, min_support, min_confidence, max_antecedents))
        .map_err(value_err)?;
    let features = table.table.features();
    Ok(to_py_rules(
        mined
            .iter()
            .map(|s| {
                let mut r = RuleRecord::from_rule(&s.rule, features);
                r.support = Some(s.counts.support());
                r.confidence = Some(s.counts.confidence());
                r.zhang = Some(s.counts.zhang());
                r
            })
            .collect(),
    ))
}

/// Half the mean support of `rules`, used to pair the baseline with a rule set.
#[pyfunction(name = "coupled_support_threshold")]
fn coupled_support_threshold_py(rules: Vec<Rule>, table: &Table) -> PyResult<f64> {
    let resolved = resolve(&rules, &table.table)?;
    coupled_support_threshold(&resolved, &table.table).map_err(value_err)
}

/// Categorical data with planted rules, its graph and the planted rules.
#[pyfunction]
#[pyo3(signature = (features=10, classes=4, rows=5000, noise_rate=0.0, cover_rows=false, seed=0))]
fn synthesize(
    features: usize,
    classes: usize,
    rows: usize,
    noise_rate: f64,
    cover_rows: bool,
    seed: u64,
) -> PyResult<(Table, Graph, Vec<Rule>)> {
    let spec = SyntheticSpec {
        features,
        classes,
        rows,
        noise_rate,
        cover_rows,
        seed,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).map_err(value_err)?;
    let planted = to_py_rules(data.planted_records(&spec));
    Ok((
        Table { table: data.table },
        Graph { bundle: data.graph },
        planted,
    ))
}

#[pymodule]
fn kgarm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<Table>()?;
    m.add_class::<Rule>()?;
    m.add_class::<Autoencoder>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(evaluate_py, m)?)?;
    m.add_function(wrap_pyfunction!(mine_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_support_threshold_py, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
