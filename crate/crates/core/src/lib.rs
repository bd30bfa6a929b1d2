//! Popularity prediction for social media posts from image and text
//! embeddings, class prototypes, and user history.
//!
//! The stages, in order:
//!
//! - [`prototypes`]: stratified shot selection and per-class mean embeddings.
//! - [`trainer`]: the alignment model (prompt contexts in [`prompt`],
//!   prototype attention in [`fusion`]), its training loop, and feature
//!   extraction.
//! - [`gbdt`]: boosted regression trees and the validation-tuned blend.
//! - [`metrics`]: Spearman correlation and mean absolute error.
//!
//! [`pipeline`] wires the stages together under one [`pipeline::RunConfig`].
//!
//! ```
//! use protopop::data::{generate_synthetic, SynthConfig};
//! use protopop::encoder::TableEncoder;
//! use protopop::pipeline::{encode_split, feature_tables, prepare, train_model, train_prototypes, RunConfig};
//!
//! let mut config = RunConfig::default();
//! config.synth = SynthConfig { classes: 3, posts_per_class: 30, dim: 8, ..Default::default() };
//! config.train.dim = 8;
//! config.train.epochs = 1;
//!
//! let corpus = generate_synthetic(&config.synth)?;
//! let encoder = TableEncoder::from_synthetic(&corpus)?;
//! let prepared = prepare(corpus.dataset, &config)?;
//! let protos = train_prototypes(&prepared, &encoder, &config)?;
//! let samples = encode_split(&prepared, &encoder, &config)?;
//! let (model, report) = train_model(&prepared, &samples.train, &encoder, &protos, &config.train)?;
//! assert_eq!(report.epoch_losses.len(), 1);
//!
//! let (train, val) = feature_tables(Some(&model), &samples, &encoder, &prepared.stats)?;
//! assert_eq!(train.rows() + val.rows(), 90);
//! # Ok::<(), protopop::Error>(())
//! ```

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoder;
mod error;
pub mod features;
pub mod fusion;
pub mod gbdt;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod prompt;
pub mod prototypes;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
