//! Semantic association rule mining for IoT sensor data.
//!
//! The pipeline turns time-stamped sensor readings into categorical
//! transactions ([`transact`]), optionally enriched with properties taken from
//! a static property graph ([`graph`]). The transactions are one-hot encoded
//! and used to train an under-complete denoising autoencoder ([`autonet`]).
//! Rules are then read out of the trained network by probing it with marked
//! test vectors ([`extract`]) and scored with the usual rule-quality measures
//! ([`quality`]). An exhaustive miner ([`baseline`]) serves as a comparison
//! point and as a correctness oracle, and [`synth`] produces datasets with
//! planted rules.

pub mod autonet;
pub mod baseline;
pub mod extract;
pub mod graph;
pub mod quality;
pub mod synth;
pub mod transact;

pub use autonet::{NetworkShape, TrainedAutoencoder, TrainingConfig};
pub use extract::{ExtractionConfig, Item, Reconstruct, Rule};
pub use graph::{Binding, GraphBundle, Ontology, PropValue, PropertyGraph};
pub use quality::RuleQualityReport;
pub use transact::{EncodedMatrix, Layout, SensorSeries, TransactionTable};
