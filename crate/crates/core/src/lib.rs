//! Relative counterfactual contrastive learning for stance detection.
//!
//! A small encoder is trained in two stages: plain cross-entropy first, then
//! jointly with a margin-ranking loss that pulls each sample toward
//! counterfactual variants the stage-1 model labels the same, and away from
//! variants it labels differently. Counterfactuals come from masking non-target
//! comment tokens and refilling them with a pluggable [`maskfill::FillModel`].

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fillclient;
pub mod losses;
pub mod manifest;
pub mod maskfill;
pub mod seed;
pub mod synthlab;
pub mod textproc;
pub mod train;

pub use corpus::{Dataset, Sample, Split, StanceLabel};
pub use encoder::{EncoderParams, Representation};
pub use error::{Error, Result};
pub use textproc::{TokenizedDataset, TokenizedSample, Vocabulary};
pub use train::{NegativeStrategy, TrainConfig};
