//! Desk-scale memoryless class-incremental backbones and synthetic data.

pub mod network;
pub mod synth;
pub mod trainers;

pub use network::Model;
pub use synth::{gen_synthetic_dataset, split_states, IncrementalDataset, Split, StateViews, SynthSpec};
pub use trainers::{
    extract_logits, feature_distillation, lucir_lambda, lwf_distillation, predict, run_incremental,
    standardize_row, train_initial, train_initial_with_losses, update, update_finetune, update_ftplus,
    update_lucir_lite, update_lwf, update_siw, BackboneConfig, BackboneKind, IncrementalRun,
};
