//! Identification and retrieval of cryptographic functions in stripped binaries.
//!
//! The crate takes pre-extracted function records (decompiled pseudo-code,
//! per-block opcode sequences, CFG edges, callees, build metadata) and provides:
//!
//! - corpus ingestion with exact (digest) and near-duplicate (MinHash) removal,
//! - a keyword registry of cryptographic classes and a whole-word discriminator,
//! - statistical featurization: 200-dim attributed-CFG block vectors and a
//!   65-dim function-level cryptographic feature vector,
//! - a trainable embedding model: mean-pooled token encoder, 5-layer GCN over
//!   the ACFG with summation readout, and a single-layer fusion MLP producing
//!   256-dim function embeddings, with exact analytic gradients,
//! - contrastive training (binary–source cosine loss and a multiple-negatives
//!   ranking loss with in-batch negatives),
//! - a flat cosine-similarity index, metadata-driven evaluation pool builders
//!   (XO/XC/XC+XB/XA/XM), and retrieval/text metrics (AUC, Recall@k, MRR@k,
//!   BLEU-4, METEOR, ROUGE-L),
//! - vulnerability scanning: top-10 detection and vulnerable/patched
//!   distinction against an embedding database.

pub mod checkpoint;
pub mod corpus;
pub mod cryptoclass;
pub mod error;
pub mod features;
pub mod metrics;
pub mod optimizer;
pub mod search;
pub mod semencoder;
pub mod simmodel;
pub mod simtrain;
pub mod synth;
pub mod vulnscan;

pub(crate) mod container;
pub(crate) mod util;

pub use error::{FocError, Result};
