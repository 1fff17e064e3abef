//! Builds transaction tables from files and records how a model was trained.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kgarm_core::autonet::TrainingConfig;
use kgarm_core::graph::{load_graph, sample_sensors, EnrichOptions, GraphBundle};
use kgarm_core::transact::{
    aggregate, build_transactions, read_sensor_csv, Enrichment, Feature, TransactionTable,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{data, open_input, read_input, CliError};

/// Everything needed to rebuild a transaction table from raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub csv: PathBuf,
    pub graph: Option<PathBuf>,
    pub window_seconds: Option<i64>,
    pub intervals: usize,
    pub enrich: bool,
    pub depth: usize,
    pub edge_properties: bool,
    /// Sensors kept after sampling; all sensors when unset.
    pub sensors: Option<Vec<String>>,
}

impl PipelineSpec {
    /// Pipeline settings of `cfg`. Sensor sampling is resolved here so the
    /// chosen sensors can be recorded.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let csv = RunConfig::required(&cfg.csv, "csv")?.to_path_buf();
        if (cfg.enrich || cfg.sample_sensors.is_some()) && cfg.graph.is_none() {
            return Err(CliError::Usage(
                "--graph is required for --enrich and --sample-sensors".into(),
            ));
        }
        let mut spec = Self {
            csv,
            graph: cfg.graph.clone(),
            window_seconds: cfg.window_seconds,
            intervals: cfg.intervals,
            enrich: cfg.enrich,
            depth: cfg.depth,
            edge_properties: cfg.edge_properties,
            sensors: None,
        };
        if let Some(count) = cfg.sample_sensors {
            let bundle = spec.load_graph()?.expect("graph path checked above");
            let picked = sample_sensors(&bundle.graph, &bundle.binding, count, cfg.seed);
            if picked.is_empty() {
                return Err(CliError::Data("the graph binds no sensors to sample".into()));
            }
            spec.sensors = Some(picked);
        }
        Ok(spec)
    }

    pub fn load_graph(&self) -> Result<Option<GraphBundle>, CliError> {
        self.graph
            .as_deref()
            .map(|p| load_graph(open_input(p)?).map_err(data(p.display())))
            .transpose()
    }

    pub fn build(&self) -> Result<TransactionTable, CliError> {
        let mut series = read_sensor_csv(open_input(&self.csv)?).map_err(data(self.csv.display()))?;
        if let Some(keep) = &self.sensors {
            series = series.restrict(keep.iter().map(String::as_str));
        }
        if let Some(w) = self.window_seconds {
            series = aggregate(&series, w).map_err(data(self.csv.display()))?;
        }
        let bundle = if self.enrich { self.load_graph()? } else { None };
        let enrichment = bundle.as_ref().map(|b| Enrichment {
            graph: &b.graph,
            binding: &b.binding,
            options: EnrichOptions {
                depth: self.depth,
                edge_properties: self.edge_properties,
            },
        });
        build_transactions(&series, enrichment, self.intervals).map_err(data(self.csv.display()))
    }
}

/// Written next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Feature dictionary: names, kinds and class values in slot order.
    pub features: Vec<Feature>,
    pub bin_edges: BTreeMap<String, Vec<f64>>,
    pub pipeline: PipelineSpec,
    pub training: TrainingConfig,
    pub seed: u64,
    pub rows: usize,
    pub epoch_losses: Vec<f64>,
    pub final_loss: Option<f64>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        serde_json::from_str(&read_input(&path)?).map_err(data(path.display()))
    }

    /// Fails unless `table` has exactly the recorded feature dictionary.
    pub fn check_table(&self, table: &TransactionTable) -> Result<(), CliError> {
        if self.features == table.features() {
            return Ok(());
        }
        let recorded: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        let rebuilt: Vec<&str> = table.features().iter().map(|f| f.name.as_str()).collect();
        let detail = match recorded.iter().zip(&rebuilt).position(|(a, b)| a != b) {
            _ if recorded.len() != rebuilt.len() => format!(
                "{} features recorded, {} rebuilt",
                recorded.len(),
                rebuilt.len()
            ),
            Some(i) => format!("feature {i} is `{}`, rebuilt `{}`", recorded[i], rebuilt[i]),
            None => "class values differ".to_string(),
        };
        Err(CliError::Data(format!("manifest/table layout mismatch: {detail}")))
    }
}
