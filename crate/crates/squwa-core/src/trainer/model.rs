//! Variant assembly and the end-to-end record model.
//!
//! [`SquwaModel`] wires three stages according to a variant's block flags:
//!
//! * an optional signal compositor (absent in NSC, reduced to six components
//!   in NKS/NKM/NKL),
//! * a feature stage — residual CNN plus LSTM, average-pool plus LSTM (NFE),
//!   or CNN alone (NRN),
//! * a classifier — SQI-keyed attention, plain mean pooling (NSQ), or
//!   SQI-softmax-weighted feature averaging (NRN).
//!
//! The model owns a full analytic backward pass and a self-describing
//! checkpoint: a JSON header holding the variant and hyperparameters,
//! followed by named little-endian `f32` parameter blocks.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

use crate::attention::{
    AttentionCache, AttentionConfig, AttentionOutput, ContextPooling, SqAttention,
};
use crate::compositor::{Compositor, CompositorCache, CompositorConfig};
use crate::error::{Result, SquwaError};
use crate::fusion::{ExtractorKind, Fusion, FusionCache, FusionConfig};
use crate::nn::{
    sigmoid, softmax_vec, stream_rng, Linear, ParamTensors, ResNet1d, ResNetCache, Scalar,
    TensorMut, TensorRef,
};
use crate::signal::{derivatives, znormalize};
use crate::trainer::checkpoint;
use crate::trainer::variants::{BlockFlags, VariantConfig};
use crate::types::{AttentionArtifacts, PpgRecord, SqiSeries, RECORD_LEN};
use rand::Rng;

/// Unablated hyperparameters shared by every variant built from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub compositor: CompositorConfig,
    pub fusion: FusionConfig,
    pub pooling: ContextPooling,
    /// Record length the model is assembled for; the attention stage bakes
    /// its positional encoding for the corresponding feature length.
    pub record_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            compositor: CompositorConfig::default(),
            fusion: FusionConfig::default(),
            pooling: ContextPooling::Mean,
            record_len: RECORD_LEN,
        }
    }
}

impl ModelConfig {
    /// Full-width configuration for 30-second records.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Narrow configuration for fast experiments on 15-second records.
    pub fn mini() -> Self {
        Self {
            compositor: CompositorConfig {
                kernel_lengths: vec![31, 95, 159],
                kernels_per_bank: 4,
                subnet_filters: 4,
                ..CompositorConfig::default()
            },
            fusion: FusionConfig {
                widths: [8, 16, 32, 64],
                blocks: [1, 1, 1, 1],
                hidden: 32,
                ..FusionConfig::default()
            },
            pooling: ContextPooling::Mean,
            record_len: 1200,
        }
    }

    /// Feature length the classifier sees.
    pub fn t_len(&self) -> usize {
        self.fusion.out_len(self.record_len)
    }

    pub fn validate(&self) -> Result<()> {
        self.compositor.validate()?;
        self.fusion.validate()?;
        if self.t_len() == 0 {
            return Err(SquwaError::config(format!(
                "record_len {} leaves no feature steps after downsampling",
                self.record_len
            )));
        }
        Ok(())
    }

    /// Apply a variant's structural edits to this base configuration.
    pub fn adjusted(&self, vc: &VariantConfig) -> Result<ModelConfig> {
        vc.validate()?;
        let mut cfg = self.clone();
        let flags = vc.flags;
        let dropped = [flags.small_conv, flags.medium_conv, flags.large_conv]
            .iter()
            .filter(|&&keep| !keep)
            .count();
        if dropped > 0 {
            if cfg.compositor.kernel_lengths.len() != 3 {
                return Err(SquwaError::config(format!(
                    "scale ablation needs a three-scale base, got {:?}",
                    cfg.compositor.kernel_lengths
                )));
            }
            let keep = [flags.small_conv, flags.medium_conv, flags.large_conv];
            cfg.compositor.kernel_lengths = cfg
                .compositor
                .kernel_lengths
                .iter()
                .zip(keep)
                .filter_map(|(&k, keep)| keep.then_some(k))
                .collect();
        }
        if !flags.cnn {
            cfg.fusion.extractor = ExtractorKind::AvgPool;
        }
        Ok(cfg)
    }
}

/// Second stage: composite signal -> temporal representation `(d, T)`.
#[derive(Debug, Clone)]
pub enum FeatureStage<F> {
    /// Feature extractor (CNN or average pool) followed by an LSTM.
    Recurrent(Fusion<F>),
    /// CNN features without recurrence; the classifier pools them directly.
    CnnOnly(ResNet1d<F>),
}

/// Third stage: temporal representation -> logit.
#[derive(Debug, Clone)]
pub enum Classifier<F> {
    /// SQI-keyed attention over hidden states.
    SqAttention(SqAttention<F>),
    /// Uniform temporal mean of hidden states, then a linear head.
    MeanPool(Linear<F>),
    /// SQI-softmax-weighted temporal mean of CNN features, then a head.
    SqiWeighted(Linear<F>),
}

/// A fully assembled detection model for one variant.
#[derive(Debug, Clone)]
pub struct SquwaModel<F> {
    pub variant: VariantConfig,
    pub config: ModelConfig,
    pub compositor: Option<Compositor<F>>,
    pub features: FeatureStage<F>,
    pub classifier: Classifier<F>,
}

enum StageCache<F> {
    Recurrent(FusionCache<F>),
    CnnOnly(ResNetCache<F>),
}

enum ClassifierCache<F> {
    SqAttention(AttentionCache<F>),
    MeanPool {
        pooled: Array1<F>,
    },
    SqiWeighted {
        weights: Array1<F>,
        pooled: Array1<F>,
    },
}

/// Forward intermediates for [`SquwaModel::backward`] plus the outputs
/// diagnostics care about.
pub struct ModelCache<F> {
    compositor: Option<CompositorCache<F>>,
    stage: StageCache<F>,
    classifier: ClassifierCache<F>,
    /// Composite signal actually fed to the feature stage.
    pub composite: Array1<F>,
    /// Stage output `(d, T)`: hidden states, or CNN features for NRN.
    pub stage_out: Array2<F>,
    pub output: AttentionOutput<F>,
}

impl<F> ModelCache<F> {
    /// Simplex weights the compositor used, when the stage exists.
    pub fn component_weights(&self) -> Option<&Array1<F>> {
        self.compositor.as_ref().map(|c| &c.weights)
    }
}

/// Build a variant from its canonical configuration and shared base
/// hyperparameters.
pub fn build_variant<F: Scalar>(
    seed: u64,
    vc: VariantConfig,
    base: &ModelConfig,
) -> Result<SquwaModel<F>> {
    let cfg = base.adjusted(&vc)?;
    SquwaModel::init(seed, vc, cfg)
}

impl<F: Scalar> SquwaModel<F> {
    /// Assemble from an already variant-adjusted configuration (as stored in
    /// checkpoints). Use [`build_variant`] to go from base hyperparameters.
    pub fn init(seed: u64, vc: VariantConfig, config: ModelConfig) -> Result<Self> {
        vc.validate()?;
        config.validate()?;
        let flags = vc.flags;
        if flags.lstm && (config.fusion.extractor == ExtractorKind::Cnn) != flags.cnn {
            return Err(SquwaError::config(
                "extractor kind contradicts the variant's CNN flag",
            ));
        }
        if !flags.lstm && config.fusion.extractor != ExtractorKind::Cnn {
            return Err(SquwaError::config(
                "CNN-only feature stage requires the CNN extractor",
            ));
        }

        // Decorrelated sub-seeds per stage.
        let mut seeder = stream_rng(seed, 0x9d);
        let s_comp: u64 = seeder.gen();
        let s_feat: u64 = seeder.gen();
        let s_cls: u64 = seeder.gen();

        let compositor = if flags.compositor {
            let mut rng = stream_rng(s_comp, 0);
            Some(Compositor::init(&mut rng, config.compositor.clone())?)
        } else {
            None
        };

        let features = if flags.lstm {
            FeatureStage::Recurrent(Fusion::init(s_feat, config.fusion)?)
        } else {
            let mut rng = stream_rng(s_feat, 0);
            FeatureStage::CnnOnly(ResNet1d::init(&mut rng, config.fusion.resnet()))
        };

        let classifier = if !flags.sq_attention {
            let mut rng = stream_rng(s_cls, 0);
            Classifier::MeanPool(Linear::xavier_init(&mut rng, 1, config.fusion.hidden))
        } else if !flags.lstm {
            let mut rng = stream_rng(s_cls, 0);
            let n = config.fusion.resnet().out_channels();
            Classifier::SqiWeighted(Linear::xavier_init(&mut rng, 1, n))
        } else {
            let att_cfg = AttentionConfig {
                hidden: config.fusion.hidden,
                t_len: config.t_len(),
                pooling: config.pooling,
            };
            Classifier::SqAttention(SqAttention::init(s_cls, att_cfg)?)
        };

        Ok(Self {
            variant: vc,
            config,
            compositor,
            features,
            classifier,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            variant: self.variant,
            config: self.config.clone(),
            compositor: self.compositor.as_ref().map(|c| c.zeros_like()),
            features: match &self.features {
                FeatureStage::Recurrent(f) => FeatureStage::Recurrent(f.zeros_like()),
                FeatureStage::CnnOnly(c) => FeatureStage::CnnOnly(c.zeros_like()),
            },
            classifier: match &self.classifier {
                Classifier::SqAttention(a) => Classifier::SqAttention(a.zeros_like()),
                Classifier::MeanPool(h) => Classifier::MeanPool(h.zeros_like()),
                Classifier::SqiWeighted(h) => Classifier::SqiWeighted(h.zeros_like()),
            },
        }
    }

    /// Whether forward needs an SQI series.
    pub fn needs_sqi(&self) -> bool {
        !matches!(self.classifier, Classifier::MeanPool(_))
    }

    /// Reconstruct the block-inclusion row from the assembled structure,
    /// given the unablated base configuration the model was built from.
    pub fn block_flags(&self, base: &ModelConfig) -> BlockFlags {
        let (small_conv, medium_conv, large_conv, compositor) = match &self.compositor {
            Some(c) => {
                let ks = &c.config.kernel_lengths;
                let has = |i: usize| {
                    base.compositor
                        .kernel_lengths
                        .get(i)
                        .is_some_and(|k| ks.contains(k))
                };
                (has(0), has(1), has(2), true)
            }
            // The stage is bypassed wholesale, so the scale columns inherit
            // the full row rather than reading as individually removed.
            None => (true, true, true, false),
        };
        let (cnn, lstm) = match &self.features {
            FeatureStage::Recurrent(f) => (f.cnn.is_some(), true),
            FeatureStage::CnnOnly(_) => (true, false),
        };
        BlockFlags {
            small_conv,
            medium_conv,
            large_conv,
            compositor,
            cnn,
            lstm,
            sq_attention: !matches!(self.classifier, Classifier::MeanPool(_)),
        }
    }

    /// Full forward pass. `sqi` must be `Some` for every classifier except
    /// plain mean pooling and must match the feature length `T`.
    pub fn forward(
        &self,
        record: &PpgRecord,
        sqi: Option<&SqiSeries>,
    ) -> Result<(AttentionOutput<F>, ModelCache<F>)> {
        if record.samples.len() != self.config.record_len {
            return Err(SquwaError::shape(format!(
                "model assembled for records of length {}, got {}",
                self.config.record_len,
                record.samples.len()
            )));
        }

        let (composite, compositor_cache) = match &self.compositor {
            Some(comp) => {
                let channels = model_channels(record);
                let (signal, cache) = comp.forward(&channels)?;
                (signal.values, Some(cache))
            }
            None => {
                let raw: Vec<F> = znormalize(&record.samples)
                    .into_iter()
                    .map(|v| crate::nn::cast(f64::from(v)))
                    .collect();
                (Array1::from_vec(raw), None)
            }
        };

        let (stage_out, stage) = match &self.features {
            FeatureStage::Recurrent(fusion) => {
                let (hidden, cache) = fusion.forward(&composite)?;
                (hidden, StageCache::Recurrent(cache))
            }
            FeatureStage::CnnOnly(cnn) => {
                let x = composite.clone().insert_axis(Axis(0));
                let (features, cache) = cnn.forward(&x);
                (features, StageCache::CnnOnly(cache))
            }
        };

        let t_len = stage_out.dim().1;
        let (output, classifier) = match &self.classifier {
            Classifier::SqAttention(att) => {
                let sqi = require_sqi(sqi, t_len)?;
                let (out, cache) = att.forward(&stage_out, &sqi)?;
                (out, ClassifierCache::SqAttention(cache))
            }
            Classifier::MeanPool(head) => {
                let inv_t = F::one() / crate::nn::cast(t_len as f64);
                let pooled = stage_out.sum_axis(Axis(1)) * inv_t;
                let logit = head.forward(&pooled)[0];
                (
                    AttentionOutput {
                        logit,
                        probability: sigmoid(logit),
                    },
                    ClassifierCache::MeanPool { pooled },
                )
            }
            Classifier::SqiWeighted(head) => {
                let sqi = require_sqi(sqi, t_len)?;
                let weights = softmax_vec(&sqi);
                let pooled = stage_out.dot(&weights);
                let logit = head.forward(&pooled)[0];
                (
                    AttentionOutput {
                        logit,
                        probability: sigmoid(logit),
                    },
                    ClassifierCache::SqiWeighted { weights, pooled },
                )
            }
        };

        Ok((
            output.clone(),
            ModelCache {
                compositor: compositor_cache,
                stage,
                classifier,
                composite,
                stage_out,
                output,
            },
        ))
    }

    /// Backward from `dL/dlogit`; returns parameter gradients shaped like
    /// the model. SQI and raw samples are inputs, so no gradient flows to
    /// them.
    pub fn backward(&self, cache: &ModelCache<F>, dlogit: F) -> SquwaModel<F> {
        let mut grads = self.zeros_like();
        let t_len = cache.stage_out.dim().1;

        let dstage = match (&self.classifier, &cache.classifier, &mut grads.classifier) {
            (
                Classifier::SqAttention(att),
                ClassifierCache::SqAttention(ac),
                Classifier::SqAttention(g),
            ) => {
                let (dhidden, ag) = att.backward(ac, dlogit);
                *g = ag;
                dhidden
            }
            (
                Classifier::MeanPool(head),
                ClassifierCache::MeanPool { pooled },
                Classifier::MeanPool(g),
            ) => {
                let (dpooled, hg) = head.backward(pooled, &Array1::from_elem(1, dlogit));
                *g = hg;
                let inv_t = F::one() / crate::nn::cast(t_len as f64);
                let mut dhidden = Array2::zeros(cache.stage_out.dim());
                for (u, &gv) in dpooled.iter().enumerate() {
                    dhidden.row_mut(u).fill(gv * inv_t);
                }
                dhidden
            }
            (
                Classifier::SqiWeighted(head),
                ClassifierCache::SqiWeighted { weights, pooled },
                Classifier::SqiWeighted(g),
            ) => {
                let (dpooled, hg) = head.backward(pooled, &Array1::from_elem(1, dlogit));
                *g = hg;
                Array2::from_shape_fn(cache.stage_out.dim(), |(c, t)| dpooled[c] * weights[t])
            }
            _ => unreachable!("classifier cache does not match the model"),
        };

        let dcomposite = match (&self.features, &cache.stage, &mut grads.features) {
            (
                FeatureStage::Recurrent(fusion),
                StageCache::Recurrent(fc),
                FeatureStage::Recurrent(g),
            ) => {
                let (dcomposite, fg) = fusion.backward(fc, &dstage);
                *g = fg;
                dcomposite
            }
            (FeatureStage::CnnOnly(cnn), StageCache::CnnOnly(rc), FeatureStage::CnnOnly(g)) => {
                let need_dx = self.compositor.is_some();
                let (dx, cg) = cnn.backward(rc, &dstage, need_dx);
                *g = cg;
                match dx {
                    Some(d) => d.index_axis_move(Axis(0), 0),
                    None => Array1::zeros(cache.composite.len()),
                }
            }
            _ => unreachable!("feature cache does not match the model"),
        };

        if let (Some(comp), Some(cc), Some(g)) =
            (&self.compositor, &cache.compositor, &mut grads.compositor)
        {
            *g = comp.backward(cc, &dcomposite);
        }
        grads
    }

    /// Exportable attention artifacts; `None` for variants whose classifier
    /// has no attention matrix.
    pub fn artifacts(&self, cache: &ModelCache<F>) -> Option<AttentionArtifacts> {
        match (&self.classifier, &cache.classifier) {
            (Classifier::SqAttention(att), ClassifierCache::SqAttention(ac)) => {
                Some(att.artifacts(&cache.output, ac))
            }
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({
            "model": "squwa",
            "variant": self.variant,
            "config": self.config,
        });
        let blocks: Vec<(String, Vec<usize>, Vec<f32>)> = self
            .tensors()
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    t.shape.clone(),
                    t.data.iter().map(|&v| v.to_f64().unwrap() as f32).collect(),
                )
            })
            .collect();
        let borrowed: Vec<(String, Vec<usize>, &[f32])> = blocks
            .iter()
            .map(|(n, s, d)| (n.clone(), s.clone(), d.as_slice()))
            .collect();
        checkpoint::write_named_blocks(path, &meta, &borrowed)
    }

    pub fn load(path: &Path) -> Result<SquwaModel<F>> {
        let (meta, blocks) = checkpoint::read_named_blocks(path)?;
        let variant: VariantConfig = serde_json::from_value(
            meta.get("variant")
                .cloned()
                .ok_or_else(|| SquwaError::version("checkpoint missing variant"))?,
        )
        .map_err(|e| SquwaError::version(format!("bad variant in checkpoint: {e}")))?;
        let config: ModelConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| SquwaError::version("checkpoint missing config"))?,
        )
        .map_err(|e| SquwaError::version(format!("bad config in checkpoint: {e}")))?;
        let mut model = SquwaModel::init(0, variant, config)?;
        let mut tensors = model.tensors_mut();
        if tensors.len() != blocks.len() {
            return Err(SquwaError::version(format!(
                "checkpoint has {} blocks, model needs {}",
                blocks.len(),
                tensors.len()
            )));
        }
        for (t, (name, shape, data)) in tensors.iter_mut().zip(blocks.iter()) {
            if &t.name != name || &t.shape != shape {
                return Err(SquwaError::version(format!(
                    "checkpoint block '{name}' does not match tensor '{}'",
                    t.name
                )));
            }
            for (dst, &src) in t.data.iter_mut().zip(data.iter()) {
                *dst = crate::nn::cast(f64::from(src));
            }
        }
        drop(tensors);
        Ok(model)
    }
}

fn require_sqi<F: Scalar>(sqi: Option<&SqiSeries>, t_len: usize) -> Result<Array1<F>> {
    let series = sqi.ok_or_else(|| {
        SquwaError::value("this variant requires an SQI series; none was provided")
    })?;
    if series.values.len() != t_len {
        return Err(SquwaError::shape(format!(
            "SQI length {} does not match feature length {t_len}",
            series.values.len()
        )));
    }
    Ok(series.values.mapv(|v| crate::nn::cast(f64::from(v))))
}

/// Normalized input stack for the compositor: z-scored raw signal and its
/// two derivatives, `(3, L)`.
pub fn model_channels<F: Scalar>(record: &PpgRecord) -> Array2<F> {
    let d = derivatives(record);
    let l = record.samples.len();
    let mut channels = Array2::zeros((3, l));
    for (row, series) in [&d.raw, &d.d1, &d.d2].iter().enumerate() {
        for (t, &v) in znormalize(series).iter().enumerate() {
            channels[(row, t)] = crate::nn::cast(f64::from(v));
        }
    }
    channels
}

fn prefix_tensors<'a, F>(prefix: &str, tensors: Vec<TensorRef<'a, F>>) -> Vec<TensorRef<'a, F>> {
    tensors
        .into_iter()
        .map(|t| TensorRef {
            name: format!("{prefix}.{}", t.name),
            shape: t.shape,
            data: t.data,
        })
        .collect()
}

fn prefix_tensors_mut<'a, F>(
    prefix: &str,
    tensors: Vec<TensorMut<'a, F>>,
) -> Vec<TensorMut<'a, F>> {
    tensors
        .into_iter()
        .map(|t| TensorMut {
            name: format!("{prefix}.{}", t.name),
            shape: t.shape,
            data: t.data,
        })
        .collect()
}

impl<F: Scalar> ParamTensors<F> for SquwaModel<F> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        if let Some(comp) = &self.compositor {
            out.extend(prefix_tensors("compositor", comp.tensors()));
        }
        match &self.features {
            FeatureStage::Recurrent(f) => out.extend(prefix_tensors("features", f.tensors())),
            FeatureStage::CnnOnly(c) => out.extend(prefix_tensors("features.cnn", c.tensors())),
        }
        match &self.classifier {
            Classifier::SqAttention(a) => out.extend(prefix_tensors("classifier", a.tensors())),
            Classifier::MeanPool(h) | Classifier::SqiWeighted(h) => {
                out.push(crate::nn::tensor_ref("classifier.head.weight", &h.weight));
                out.push(crate::nn::tensor_ref("classifier.head.bias", &h.bias));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        if let Some(comp) = &mut self.compositor {
            out.extend(prefix_tensors_mut("compositor", comp.tensors_mut()));
        }
        match &mut self.features {
            FeatureStage::Recurrent(f) => {
                out.extend(prefix_tensors_mut("features", f.tensors_mut()));
            }
            FeatureStage::CnnOnly(c) => {
                out.extend(prefix_tensors_mut("features.cnn", c.tensors_mut()));
            }
        }
        match &mut self.classifier {
            Classifier::SqAttention(a) => {
                out.extend(prefix_tensors_mut("classifier", a.tensors_mut()));
            }
            Classifier::MeanPool(h) | Classifier::SqiWeighted(h) => {
                out.push(crate::nn::tensor_mut(
                    "classifier.head.weight",
                    &mut h.weight,
                ));
                out.push(crate::nn::tensor_mut("classifier.head.bias", &mut h.bias));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{point_loss_and_grad, LossKind};
    use crate::synth::synth_pulse_train;
    use crate::synth::SynthConfig;
    use crate::trainer::variants::Variant;
    use crate::types::Rhythm;

    fn tiny_config(record_len: usize) -> ModelConfig {
        ModelConfig {
            compositor: CompositorConfig {
                kernel_lengths: vec![9, 19, 39],
                kernels_per_bank: 2,
                subnet_filters: 2,
                subnet_kernel: 9,
                subnet_stride: 4,
                per_record_weights: true,
            },
            fusion: FusionConfig {
                widths: [4, 8, 8, 8],
                blocks: [1, 1, 1, 1],
                hidden: 8,
                ..FusionConfig::default()
            },
            pooling: ContextPooling::Mean,
            record_len,
        }
    }

    fn tiny_record(seed: u64, record_len: usize, rhythm: Rhythm) -> PpgRecord {
        let cfg = SynthConfig {
            duration_s: record_len as f64 / 80.0,
            ..SynthConfig::default()
        };
        let mut rng = stream_rng(seed, 90);
        synth_pulse_train(rhythm, &cfg, &mut rng).unwrap()
    }

    fn uniform_sqi(seed: u64, t_len: usize) -> SqiSeries {
        let mut rng = stream_rng(seed, 91);
        SqiSeries::new(Array1::from_shape_fn(t_len, |_| {
            rng.gen_range(0.0f32..=1.0)
        }))
        .unwrap()
    }

    #[test]
    fn every_variant_builds_and_matches_its_row() {
        let base = tiny_config(320);
        let record = tiny_record(1, 320, Rhythm::Af);
        let sqi = uniform_sqi(2, base.t_len());
        for variant in Variant::ALL {
            let vc = VariantConfig::of(variant);
            let model = build_variant::<f32>(7, vc, &base).unwrap();
            assert_eq!(model.block_flags(&base), variant.flags(), "{variant}");

            let (out, cache) = model.forward(&record, Some(&sqi)).unwrap();
            assert!(
                out.probability > 0.0 && out.probability < 1.0,
                "{variant}: probability {}",
                out.probability
            );
            let wants_artifacts = !matches!(variant, Variant::Nsq | Variant::Nrn);
            assert_eq!(
                model.artifacts(&cache).is_some(),
                wants_artifacts,
                "{variant}"
            );
            assert_eq!(model.needs_sqi(), variant != Variant::Nsq, "{variant}");
            if model.needs_sqi() {
                let err = model.forward(&record, None).map(|_| ()).unwrap_err();
                assert_eq!(err.kind(), "ValueError", "{variant}");
            } else {
                model.forward(&record, None).unwrap();
            }
        }
    }

    #[test]
    fn scale_ablations_drop_to_six_components() {
        let base = tiny_config(320);
        let record = tiny_record(3, 320, Rhythm::NonAf);
        let sqi = uniform_sqi(4, base.t_len());
        for (variant, gone) in [
            (Variant::Nks, 9usize),
            (Variant::Nkm, 19),
            (Variant::Nkl, 39),
        ] {
            let model = build_variant::<f32>(8, VariantConfig::of(variant), &base).unwrap();
            let comp = model.compositor.as_ref().unwrap();
            assert_eq!(comp.config.n_banks(), 6, "{variant}");
            assert!(!comp.config.kernel_lengths.contains(&gone), "{variant}");
            let (_, cache) = model.forward(&record, Some(&sqi)).unwrap();
            assert_eq!(cache.component_weights().unwrap().len(), 6, "{variant}");
        }
    }

    #[test]
    fn nsc_feeds_the_normalized_raw_signal() {
        let base = tiny_config(320);
        let record = tiny_record(5, 320, Rhythm::Af);
        let sqi = uniform_sqi(6, base.t_len());
        let model = build_variant::<f32>(9, VariantConfig::of(Variant::Nsc), &base).unwrap();
        assert!(model.compositor.is_none());
        let (_, cache) = model.forward(&record, Some(&sqi)).unwrap();
        let expect = znormalize(&record.samples);
        for (a, b) in cache.composite.iter().zip(expect.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn nfe_runs_without_a_cnn() {
        let base = tiny_config(320);
        let record = tiny_record(10, 320, Rhythm::Af);
        let sqi = uniform_sqi(11, base.t_len());
        let model = build_variant::<f32>(12, VariantConfig::of(Variant::Nfe), &base).unwrap();
        match &model.features {
            FeatureStage::Recurrent(f) => {
                assert!(f.cnn.is_none());
                assert_eq!(f.config.extractor, ExtractorKind::AvgPool);
            }
            FeatureStage::CnnOnly(_) => panic!("NFE must keep the recurrent stage"),
        }
        let (_, cache) = model.forward(&record, Some(&sqi)).unwrap();
        assert_eq!(cache.stage_out.dim(), (base.fusion.hidden, base.t_len()));
    }

    #[test]
    fn nrn_pools_features_by_sqi_softmax() {
        let base = tiny_config(320);
        let record = tiny_record(13, 320, Rhythm::NonAf);
        let sqi = uniform_sqi(14, base.t_len());
        let model = build_variant::<f64>(15, VariantConfig::of(Variant::Nrn), &base).unwrap();
        let (out, cache) = model.forward(&record, Some(&sqi)).unwrap();

        let Classifier::SqiWeighted(head) = &model.classifier else {
            panic!("NRN must use SQI-weighted pooling");
        };
        let sqi_f: Array1<f64> = sqi.values.mapv(f64::from);
        let w = softmax_vec(&sqi_f);
        let pooled = cache.stage_out.dot(&w);
        let logit = head.forward(&pooled)[0];
        assert!((logit - out.logit).abs() < 1e-12);
    }

    /// Central-difference gradient check through the whole model, for every
    /// stage combination: attention (full pipeline), SQI pooling (CNN-only),
    /// average-pool extractor, and plain mean pooling.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let record_len = 128;
        let base = tiny_config(record_len);
        let record = tiny_record(20, record_len, Rhythm::Af);
        let sqi = uniform_sqi(21, base.t_len());

        for (variant, seed) in [
            (Variant::Squwa, 22u64),
            (Variant::Nrn, 23),
            (Variant::Nfe, 24),
            (Variant::Nsq, 25),
            (Variant::Nkl, 26),
        ] {
            let mut model = build_variant::<f64>(seed, VariantConfig::of(variant), &base).unwrap();
            // Nudge every parameter off its init point so no ReLU sits
            // exactly on a kink where one-sided derivatives disagree.
            let mut rng = stream_rng(seed, 92);
            for t in model.tensors_mut() {
                for v in t.data.iter_mut() {
                    *v += 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            let sqi_arg = model.needs_sqi().then_some(&sqi);

            let loss_of = |m: &SquwaModel<f64>| -> f64 {
                let (out, _) = m.forward(&record, sqi_arg).unwrap();
                point_loss_and_grad(&LossKind::Bce, out.logit, record.label).0
            };
            let (out, cache) = model.forward(&record, sqi_arg).unwrap();
            let (_, dz) = point_loss_and_grad(&LossKind::Bce, out.logit, record.label);
            let grads = model.backward(&cache, dz);

            let shapes: Vec<(String, usize)> = model
                .tensors()
                .iter()
                .map(|t| (t.name.clone(), t.data.len()))
                .collect();
            let eps = 1e-5;
            for (ti, (name, len)) in shapes.iter().enumerate() {
                let an: Vec<f64> = grads.tensors()[ti].data.to_vec();
                for &idx in &[0, len / 2, len - 1] {
                    let orig = model.tensors()[ti].data[idx];
                    model.tensors_mut()[ti].data[idx] = orig + eps;
                    let up = loss_of(&model);
                    model.tensors_mut()[ti].data[idx] = orig - eps;
                    let down = loss_of(&model);
                    model.tensors_mut()[ti].data[idx] = orig;
                    let fd = (up - down) / (2.0 * eps);
                    let scale = fd.abs().max(an[idx].abs()).max(1e-5);
                    assert!(
                        (fd - an[idx]).abs() / scale < 1e-4,
                        "{variant} {name}[{idx}]: fd={fd:.3e} analytic={:.3e}",
                        an[idx]
                    );
                }
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise_for_every_variant() {
        let dir = tempfile::tempdir().unwrap();
        let base = tiny_config(320);
        let record = tiny_record(30, 320, Rhythm::Af);
        let sqi = uniform_sqi(31, base.t_len());
        for variant in Variant::ALL {
            let model = build_variant::<f32>(32, VariantConfig::of(variant), &base).unwrap();
            let sqi_arg = model.needs_sqi().then_some(&sqi);
            let (before, _) = model.forward(&record, sqi_arg).unwrap();

            let path = dir.path().join(format!("{variant}.ckpt"));
            model.save(&path).unwrap();
            let loaded = SquwaModel::<f32>::load(&path).unwrap();
            assert_eq!(loaded.variant, model.variant);
            assert_eq!(loaded.config, model.config);
            let (after, _) = loaded.forward(&record, sqi_arg).unwrap();
            assert_eq!(before.logit.to_bits(), after.logit.to_bits(), "{variant}");
            assert_eq!(
                before.probability.to_bits(),
                after.probability.to_bits(),
                "{variant}"
            );
        }
    }

    #[test]
    fn truncated_checkpoint_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let base = tiny_config(320);
        let model = build_variant::<f32>(33, VariantConfig::of(Variant::Squwa), &base).unwrap();
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() * 3 / 5]).unwrap();
        let err = SquwaModel::<f32>::load(&path).unwrap_err();
        assert_eq!(err.kind(), "VersionError");
    }

    #[test]
    fn wrong_record_length_is_rejected() {
        let base = tiny_config(320);
        let model = build_variant::<f32>(34, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let record = tiny_record(35, 256, Rhythm::Af);
        let sqi = uniform_sqi(36, base.t_len());
        let err = model.forward(&record, Some(&sqi)).map(|_| ()).unwrap_err();
        assert_eq!(err.kind(), "ShapeError");
    }

    #[test]
    fn sqi_length_mismatch_is_rejected() {
        let base = tiny_config(320);
        let model = build_variant::<f32>(37, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let record = tiny_record(38, 320, Rhythm::Af);
        let sqi = uniform_sqi(39, base.t_len() + 1);
        let err = model.forward(&record, Some(&sqi)).map(|_| ()).unwrap_err();
        assert_eq!(err.kind(), "ShapeError");
    }

    #[test]
    fn adjusted_config_requires_three_scales_for_ablation() {
        let mut base = tiny_config(320);
        base.compositor.kernel_lengths = vec![9, 19];
        let err = base.adjusted(&VariantConfig::of(Variant::Nks)).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn extractor_flag_mismatch_is_rejected() {
        let base = tiny_config(320);
        // NFE flags demand the average-pool extractor; hand init a config
        // that still claims a CNN.
        let vc = VariantConfig::of(Variant::Nfe);
        let err = SquwaModel::<f32>::init(40, vc, base).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }
}
