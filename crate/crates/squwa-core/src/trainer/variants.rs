//! Ablation-variant taxonomy.
//!
//! Every named variant is a row in a block-inclusion grid: which of the
//! seven architectural blocks (three compositor kernel scales, the composite
//! recombination itself, the CNN, the LSTM, and SQI-aware weighting) the
//! assembled model retains. The grid is encoded as data so the factory can
//! be checked against it row by row, and so configs that drift from their
//! canonical row are rejected instead of silently building something else.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SquwaError};

/// The full model and its eight ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Complete architecture.
    Squwa,
    /// No small kernel scale.
    Nks,
    /// No medium kernel scale.
    Nkm,
    /// No large kernel scale.
    Nkl,
    /// No signal compositor: the raw signal feeds the CNN directly.
    Nsc,
    /// No CNN feature extractor: the composite feeds the LSTM directly.
    Nfe,
    /// No recurrent network: SQI-weighted averaging replaces the LSTM.
    Nrn,
    /// No signal-quality integration: hidden states are mean-pooled.
    Nsq,
    /// Random SQI: full architecture driven by uniform-noise quality input.
    Rsq,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Squwa,
        Variant::Nks,
        Variant::Nkm,
        Variant::Nkl,
        Variant::Nsc,
        Variant::Nfe,
        Variant::Nrn,
        Variant::Nsq,
        Variant::Rsq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Squwa => "SQUWA",
            Variant::Nks => "NKS",
            Variant::Nkm => "NKM",
            Variant::Nkl => "NKL",
            Variant::Nsc => "NSC",
            Variant::Nfe => "NFE",
            Variant::Nrn => "NRN",
            Variant::Nsq => "NSQ",
            Variant::Rsq => "RSQ",
        }
    }

    /// Canonical block-inclusion row for this variant.
    ///
    /// Note the deliberately asymmetric encoding of two rows: NSC keeps the
    /// three scale columns marked present (the whole compositor stage is
    /// bypassed, not the scales individually), and NRN keeps SQI weighting
    /// present (its replacement pooling still consumes the SQI series).
    pub fn flags(&self) -> BlockFlags {
        let all = BlockFlags::all();
        match self {
            Variant::Squwa | Variant::Rsq => all,
            Variant::Nks => BlockFlags {
                small_conv: false,
                ..all
            },
            Variant::Nkm => BlockFlags {
                medium_conv: false,
                ..all
            },
            Variant::Nkl => BlockFlags {
                large_conv: false,
                ..all
            },
            Variant::Nsc => BlockFlags {
                compositor: false,
                ..all
            },
            Variant::Nfe => BlockFlags { cnn: false, ..all },
            Variant::Nrn => BlockFlags { lstm: false, ..all },
            Variant::Nsq => BlockFlags {
                sq_attention: false,
                ..all
            },
        }
    }

    /// Canonical quality-index source for this variant.
    pub fn sqi_source(&self) -> SqiSource {
        match self {
            Variant::Rsq => SqiSource::Random,
            _ => SqiSource::Model,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = SquwaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SQUWA" => Ok(Variant::Squwa),
            "NKS" => Ok(Variant::Nks),
            "NKM" => Ok(Variant::Nkm),
            "NKL" => Ok(Variant::Nkl),
            "NSC" => Ok(Variant::Nsc),
            "NFE" => Ok(Variant::Nfe),
            "NRN" => Ok(Variant::Nrn),
            "NSQ" => Ok(Variant::Nsq),
            "RSQ" => Ok(Variant::Rsq),
            other => Err(SquwaError::config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Which architectural blocks a model retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFlags {
    /// Small-kernel decomposition scale.
    pub small_conv: bool,
    /// Medium-kernel decomposition scale.
    pub medium_conv: bool,
    /// Large-kernel decomposition scale.
    pub large_conv: bool,
    /// Composite signal generation (the recombination stage as a whole).
    pub compositor: bool,
    /// Residual CNN feature extractor.
    pub cnn: bool,
    /// Recurrent (LSTM) layer.
    pub lstm: bool,
    /// SQI-aware weighting of the temporal axis.
    pub sq_attention: bool,
}

impl BlockFlags {
    pub const fn all() -> Self {
        Self {
            small_conv: true,
            medium_conv: true,
            large_conv: true,
            compositor: true,
            cnn: true,
            lstm: true,
            sq_attention: true,
        }
    }
}

/// Where the per-timestep quality index comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SqiSource {
    /// Class activation map of the frozen quality classifier.
    Model,
    /// Uniform(0,1) noise, drawn once per record per timestep.
    Random,
}

/// A variant name plus its resolved block flags and quality source.
///
/// The flags are stored redundantly with the name so checkpoints and
/// experiment logs are self-describing; [`validate`](Self::validate) rejects
/// any combination that does not match the variant's canonical row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub flags: BlockFlags,
    pub sqi_source: SqiSource,
}

impl VariantConfig {
    /// Canonical configuration for a variant.
    pub fn of(variant: Variant) -> Self {
        Self {
            variant,
            flags: variant.flags(),
            sqi_source: variant.sqi_source(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.flags != self.variant.flags() {
            return Err(SquwaError::config(format!(
                "block flags {:?} do not match the {} row {:?}",
                self.flags,
                self.variant,
                self.variant.flags()
            )));
        }
        if self.sqi_source != self.variant.sqi_source() {
            return Err(SquwaError::config(format!(
                "{} requires sqi_source {:?}",
                self.variant,
                self.variant.sqi_source()
            )));
        }
        Ok(())
    }
}
