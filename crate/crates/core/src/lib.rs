//! Imbalance-aware multi-task text classification.
//!
//! - [`corpus`]: task CSV loading, label mapping, stratified splits
//! - [`imbalance`]: task sampling weights and inverse-frequency class weights
//! - [`loss`]: cross-entropy and the soft balanced-accuracy surrogate
//! - [`trainer`]: hashed-feature classifier trained with the combined loss
//! - [`metrics`]: confusion matrices, ACC, BACC, run aggregation
//! - [`promptkit`]: zero-shot and few-shot prompt construction

pub mod corpus;
pub mod imbalance;
pub mod loss;
pub mod metrics;
pub mod promptkit;
pub mod task;
pub mod trainer;

pub use task::{SourceDataset, TaskId, TaskSpec};
