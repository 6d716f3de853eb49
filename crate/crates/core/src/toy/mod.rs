//! Desk-scale attention classifier used to exercise adapters end to end.

mod model;
mod task;
mod train;

pub use model::{BatchGrads, CraftAdapters, LayerWeights, Mode, ModelGrads, ToyConfig, ToyModel};
pub use task::{majority_group, Dataset, Example, SyntheticTask, TaskRule};
pub use train::{
    craft_finetune, evaluate, head_only_finetune, pretrain, FinetuneOptions, FinetuneOutcome,
    Metrics, PretrainOptions, PretrainReport,
};
