//! Neural quality-estimation models on a small reverse-mode autodiff core.
//!
//! [`graph::Graph`] records batch-level tensor ops (including a fused masked
//! LSTM direction, same-padded 1-D convolution, masked batch norm and masked
//! max-pooling) and differentiates them in one backward sweep. [`model`]
//! assembles the hybrid BiLSTM + CNN network and its two baselines on top.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod scoring;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Batch, Embedder, Example};
pub use graph::{BnMode, Graph, Var};
pub use model::{Architecture, Head, ModelConfig, Mode, Prediction, QeModel};
pub use optim::Adam;
pub use scoring::{predict_scoring, ScoringBands};
pub use tensor::Tensor;
pub use train::{accuracy, predict_examples, train, EpochLog, LrSchedule, ScheduleEvent, TrainConfig, Trainer};
