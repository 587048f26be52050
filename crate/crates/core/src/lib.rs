//! seva-core: a desk-scale toolkit for severity-aware dysarthric speech
//! recognition experiments.
//!
//! The crate is organized around a pipeline over a synthetic, severity-stratified
//! isolated-word corpus:
//!
//! - [`netcore`] — minimal dense-network kernel with explicit forward/backward,
//!   losses, SGD and a finite-difference gradient checker,
//! - [`features`] — STFT, 80-dim log-mel filter-bank + delta front-end, SVD
//!   spectral-basis extraction, energy VAD and speed perturbation,
//! - [`embedder`] — dual-target (severity + speaker) bottleneck embedding
//!   network producing 25-dim auxiliary features and unsupervised severity
//!   assessment,
//! - [`hybrid_am`] — 7-layer hybrid DNN frame classifier with structured
//!   speaker-severity LHUC scaling and a three-way multitask loss,
//! - [`adaptation`] — speaker-severity adaptive training, unsupervised
//!   test-time LHUC adaptation and KLD-regularized severity-dependent
//!   fine-tuning,
//! - [`seqmodel`] — spliced-frame encoder with CTC and severity heads, plus
//!   CTC scoring of fixed hypotheses for second-pass rescoring,
//! - [`decoder`] — isolated-word Viterbi first pass producing N-best lists and
//!   score-interpolation rescoring,
//! - [`corpus`] — synthetic severity-stratified corpus generator with known
//!   phone segmentations,
//! - [`evaluate`] — WER scoring and matched-pairs significance testing.
//!
//! All randomness flows through seeded [`util::rng::SplitMix64`] streams; every
//! operation is deterministic given its inputs and seed.

pub mod adaptation;
pub mod corpus;
pub mod decoder;
pub mod embedder;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod hybrid_am;
pub mod netcore;
pub mod seqmodel;
pub mod util;

pub use error::{Error, Result};
