//! Dual-attention dynamic-graph classifier for region-by-time signals.
//!
//! A subject's `T' × V` series is z-scored per region and cut into
//! non-overlapping windows. In each window, self-attention over timepoints and
//! over regions runs on the raw window; the region-axis attention scores give
//! a sigmoid adjacency that is sparsified row-wise and fed, together with the
//! attended region features, through a shared graph convolution. Pooled
//! window embeddings form a token sequence for a transformer encoder, whose
//! pooled output goes to an MLP head.
//!
//! Everything is differentiated by the tape in [`tape`], and
//! [`gradcheck::grad_check`] verifies it against finite differences.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dyngraph;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod verify;

pub use config::TrainConfig;
pub use data::{BoldSignal, LabeledDataset, Split, SynthSpec, WindowSet};
pub use error::{Error, Result};
pub use metrics::{compute_metrics, Metrics};
pub use model::{model_forward, Model, ModelConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Axis, OpKind, Tape, Var};
pub use tensor::{precision, set_precision, Precision, Tensor};
pub use training::{evaluate, train, EpochRecord, TrainOutcome};
