//! Collaborative-filtering loss laboratory.
//!
//! Eleven CF losses (pointwise, pairwise, setwise and alignment/uniformity
//! families) with analytic gradients, MF and LightGCN encoders, a lazy Adam
//! optimizer, full-ranking evaluation and numerical checks of the algebraic
//! relations between the losses.
//!
//! Losses are evaluated on the *final* embeddings produced by an encoder and
//! report gradients with respect to those; [`encoders::Encoder::backward`]
//! maps them back onto the trainable tables.

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod losses;
pub mod optim;
pub mod relations;
pub mod tensor;
pub mod training;

pub use data::{Batch, Interaction, InteractionDataset, NegativeMode, SplitLabel};
pub use encoders::{Embeddings, Encoder, ModelState, NormalizedAdjacency};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use losses::{LossConfig, LossEvaluation, LossKind, MarginMode};
pub use optim::AdamState;
pub use tensor::{Grad, ParamKind, Tensor};
pub use training::{TrainConfig, TrainOutcome};
