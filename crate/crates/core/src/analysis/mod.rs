//! Weight-dispersion PCA, trainable-parameter scaling and storage accounting.
//!
//! Every report renders two ways: `to_records` emits one whitespace-separated
//! `key=value` record per line for machine consumption, `to_table` a
//! fixed-width table for people.

mod dispersion;
mod scaling;
mod storage;

pub use dispersion::{
    dispersion, DispersionReport, LayerDispersion, LayerProjections, ProjectionKind,
};
pub use scaling::{
    method_params, param_scaling, Method, ScalingRow, ScalingSettings, ScalingTable,
};
pub use storage::{storage_report, StorageReport};
