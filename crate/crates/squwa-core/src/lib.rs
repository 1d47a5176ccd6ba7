//! Signal-quality-weighted AF detection from PPG waveforms.
//!
//! The pipeline turns a 30-second PPG window into an AF probability while
//! staying honest about signal quality:
//!
//! 1. [`compositor`] decomposes the raw signal and its first two derivatives
//!    with three kernel scales and fuses the nine components into one
//!    composite signal through a small attention subnet.
//! 2. [`fusion`] runs a 1-D residual CNN over the composite signal and a
//!    one-directional LSTM over the resulting feature sequence.
//! 3. [`sqmodel`] holds a separately trained quality classifier whose class
//!    activation map provides a per-timestep signal quality index (SQI).
//! 4. [`attention`] keys scaled dot-product attention on the SQI series so
//!    that low-quality stretches of signal lose influence on the decision.
//!
//! [`synth`] and [`corpus`] provide a fully synthetic, seeded PPG corpus with
//! ground-truth corruption masks; [`losses`] adds label-noise-robust
//! objectives; [`trainer`] builds and trains the ablation variants; [`eval`]
//! computes AUROC/F1/AUCPR, quality-stratified curves, and attention reports.

pub mod attention;
pub mod compositor;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod losses;
pub mod nn;
pub mod signal;
pub mod sqmodel;
pub mod synth;
pub mod trainer;
pub mod types;

pub use error::{Result, SquwaError};
pub use types::{
    AttentionArtifacts, FeatureSequence, HiddenStates, PpgRecord, Rhythm, SqiSeries,
    DEFAULT_DOWNSAMPLE, DEFAULT_FS, DEFAULT_HIDDEN, RECORD_LEN,
};
