//! Cross-modal latent alignment laboratory.
//!
//! An audio encoder is trained to land in the embedding space of a frozen
//! visual encoder, so that a generator conditioned on visual embeddings can
//! be driven by sound. Everything runs on synthetic paired clips whose ground
//! truth is known.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod embedding;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gap;
pub mod inversion;
mod io_util;
pub mod manipulation;
pub mod network;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod pair_selection;
pub mod synth;
pub mod training;

pub use embedding::{cosine_similarity, l2_distance, unit_normalize, FeatureMatrix, FeatureVector};
pub use error::{ErrorKind, Result, XmaError};
pub use objectives::{infonce_term, loss_audio_centric, loss_total, Distance, LossKind, LossResult, LossVariant};
