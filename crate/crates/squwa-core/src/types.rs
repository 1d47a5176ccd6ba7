//! Shared domain types and shape conventions.
//!
//! Shape algebra at the defaults: records carry `L = 2400` samples (30 s at
//! 80 Hz), both CNN branches downsample by `D = 32`, so every temporal
//! sequence downstream has `T = L / D = 75` steps, and the LSTM emits `k = 64`
//! hidden units per step. Attention weights are therefore 75x75.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SquwaError};

/// Samples per record: 30 s at 80 Hz.
pub const RECORD_LEN: usize = 2400;
/// Default sampling rate in Hz.
pub const DEFAULT_FS: f64 = 80.0;
/// Shared temporal downsampling factor of both CNN branches.
pub const DEFAULT_DOWNSAMPLE: usize = 32;
/// Default LSTM hidden size.
pub const DEFAULT_HIDDEN: usize = 64;

/// Rhythm class label. AF is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rhythm {
    NonAf = 0,
    Af = 1,
}

impl Rhythm {
    pub fn as_f32(self) -> f32 {
        match self {
            Rhythm::NonAf => 0.0,
            Rhythm::Af => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Rhythm::NonAf => Rhythm::Af,
            Rhythm::Af => Rhythm::NonAf,
        }
    }
}

/// One fixed-length PPG window with its label and optional ground-truth
/// corruption mask (1 = corrupted sample).
#[derive(Debug, Clone, PartialEq)]
pub struct PpgRecord {
    pub samples: Vec<f32>,
    pub fs: f64,
    pub label: Rhythm,
    pub quality_mask: Option<Vec<u8>>,
    pub record_id: String,
}

impl PpgRecord {
    /// Fraction of samples marked corrupted; 0 when no mask is present.
    pub fn corruption_fraction(&self) -> f64 {
        match &self.quality_mask {
            Some(mask) => {
                mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / mask.len() as f64
            }
            None => 0.0,
        }
    }
}

/// Check every record invariant; returns the record unchanged on success.
pub fn validate_record(record: PpgRecord) -> Result<PpgRecord> {
    if record.samples.len() != RECORD_LEN {
        return Err(SquwaError::shape(format!(
            "record {}: expected {} samples, got {}",
            record.record_id,
            RECORD_LEN,
            record.samples.len()
        )));
    }
    if let Some(bad) = record.samples.iter().position(|x| !x.is_finite()) {
        return Err(SquwaError::value(format!(
            "record {}: non-finite sample at index {}",
            record.record_id, bad
        )));
    }
    if record.fs <= 0.0 {
        return Err(SquwaError::value(format!(
            "record {}: sampling rate must be positive, got {}",
            record.record_id, record.fs
        )));
    }
    if let Some(mask) = &record.quality_mask {
        if mask.len() != record.samples.len() {
            return Err(SquwaError::mask(format!(
                "record {}: mask length {} != sample length {}",
                record.record_id,
                mask.len(),
                record.samples.len()
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(SquwaError::mask(format!(
                "record {}: mask values must be 0 or 1",
                record.record_id
            )));
        }
    }
    Ok(record)
}

/// CNN feature sequence, `n` channels by `T` downsampled timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Array2<f32>,
}

/// Per-timestep scalar signal quality in [0, 1], aligned with the feature
/// sequence (length `T`).
#[derive(Debug, Clone, PartialEq)]
pub struct SqiSeries {
    pub values: Array1<f32>,
}

impl SqiSeries {
    pub fn new(values: Array1<f32>) -> Result<Self> {
        if values
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(SquwaError::value(
                "SQI values must be finite and within [0, 1]".to_string(),
            ));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of timesteps with SQI below the given threshold.
    pub fn bad_fraction(&self, threshold: f32) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let bad = self.values.iter().filter(|&&v| v < threshold).count();
        bad as f64 / self.values.len() as f64
    }
}

/// Recurrent hidden states, `k` units by `T` timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub values: Array2<f32>,
}

/// Attention outputs retained for interpretation: the TxT weight matrix,
/// the pooled context vector, and the classification head output.
#[derive(Debug, Clone)]
pub struct AttentionArtifacts {
    /// Row-stochastic attention weights (rows index query timesteps,
    /// columns index SQI timesteps).
    pub weights: Array2<f32>,
    /// Mean-pooled context vector, length `k`.
    pub context: Array1<f32>,
    pub logit: f32,
    pub probability: f32,
}

impl AttentionArtifacts {
    /// Column attention mass: total weight each SQI timestep receives across
    /// all query rows. Sums to `T` for a row-stochastic matrix.
    pub fn column_mass(&self) -> Array1<f32> {
        self.weights.sum_axis(ndarray::Axis(0))
    }
}
