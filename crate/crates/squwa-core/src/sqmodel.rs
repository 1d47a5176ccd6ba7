//! Signal-quality branch: a residual CNN good/bad-quality classifier whose
//! class activation map (CAM) doubles as a per-timestep signal quality index.
//!
//! The classifier head is a bias-free linear map on globally average-pooled
//! features, so the CAM identity `mean_t cam[t] = logit` holds exactly and
//! the CAM localizes which stretches of signal drove the quality decision.
//! The network downsamples by the same factor as the feature branch, keeping
//! the SQI series aligned with the hidden-state sequence.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

use crate::corpus::{Corpus, Split};
use crate::error::{Result, SquwaError};
use crate::nn::conv::GlobalAvgPool;
use crate::nn::{
    randn_mat, softmax_vec, stream_rng, tensor_mut, tensor_ref, Adam, ParamTensors, ResNet1d,
    ResNetCache, ResNetConfig, Scalar, TensorMut, TensorRef,
};
use crate::signal::znormalize;
use crate::trainer::checkpoint;
use crate::types::{PpgRecord, SqiSeries};

/// Class indices of the quality head.
pub const GOOD_CLASS: usize = 0;
pub const BAD_CLASS: usize = 1;

/// Records whose corruption fraction exceeds this are labeled bad quality.
pub const DEFAULT_BAD_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqConfig {
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    /// Corruption fraction above which a record counts as bad quality.
    pub bad_threshold: f64,
}

impl Default for SqConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64, 64],
            blocks: [2, 2, 2, 2],
            bad_threshold: DEFAULT_BAD_THRESHOLD,
        }
    }
}

impl SqConfig {
    /// Deeper topology mirroring the classic 34-layer block layout.
    pub fn deep() -> Self {
        Self {
            blocks: [3, 4, 6, 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|&w| w == 0) || self.blocks.iter().any(|&b| b == 0) {
            return Err(SquwaError::config(
                "widths and block counts must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.bad_threshold) {
            return Err(SquwaError::config("bad_threshold must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn resnet(&self) -> ResNetConfig {
        ResNetConfig {
            in_channels: 1,
            widths: self.widths,
            blocks: self.blocks,
        }
    }
}

/// Quality classifier: residual CNN plus a bias-free two-class head.
#[derive(Debug, Clone)]
pub struct SqModel<F> {
    pub resnet: ResNet1d<F>,
    /// `(2, C)` classifier weights; no bias, so the CAM identity is exact.
    pub w_cls: Array2<F>,
    pub config: SqConfig,
}

impl<F: Scalar> SqModel<F> {
    pub fn init(seed: u64, config: SqConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, 0);
        let resnet = ResNet1d::init(&mut rng, config.resnet());
        let c = config.resnet().out_channels();
        let w_cls = randn_mat(&mut rng, 2, c, (1.0 / c as f64).sqrt());
        Ok(Self {
            resnet,
            w_cls,
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            resnet: self.resnet.zeros_like(),
            w_cls: Array2::zeros(self.w_cls.dim()),
            config: self.config,
        }
    }

    /// Normalize and run the CNN: record -> `(logits, feature_map)`.
    /// The feature map is the last pre-pooling activation, `(C, T)`.
    pub fn forward(&self, record: &PpgRecord) -> Result<(Array1<F>, Array2<F>)> {
        let (logits, features, _) = self.forward_cached(record)?;
        Ok((logits, features))
    }

    fn forward_cached(&self, record: &PpgRecord) -> Result<(Array1<F>, Array2<F>, ResNetCache<F>)> {
        // Anything shorter than two downsample windows cannot yield a
        // meaningful feature sequence.
        if record.samples.len() < 2 * crate::nn::resnet::RESNET_DOWNSAMPLE {
            return Err(SquwaError::shape(format!(
                "record '{}' too short for the quality network ({} samples)",
                record.record_id,
                record.samples.len()
            )));
        }
        let normed = znormalize(&record.samples);
        let x = Array2::from_shape_vec(
            (1, normed.len()),
            normed
                .into_iter()
                .map(|v| crate::nn::cast(f64::from(v)))
                .collect(),
        )
        .expect("shape");
        let (features, cache) = self.resnet.forward(&x);
        let gap = GlobalAvgPool::forward(&features);
        let logits = self.w_cls.dot(&gap);
        Ok((logits, features, cache))
    }

    /// Convenience: forward plus [`cam_sqi`] in one call.
    pub fn sqi(&self, record: &PpgRecord) -> Result<SqiSeries> {
        let (_, features) = self.forward(record)?;
        cam_sqi(&features, &self.w_cls, GOOD_CLASS)
    }

    /// Gradient of the two-class softmax cross-entropy at one record.
    /// Returns `(loss, correct, grads)`.
    fn loss_grads(&self, record: &PpgRecord, bad: bool) -> Result<(f64, bool, SqModel<F>)> {
        let (logits, features, cache) = self.forward_cached(record)?;
        let probs = softmax_vec(&logits);
        let y = if bad { BAD_CLASS } else { GOOD_CLASS };
        let loss = -probs[y].max(crate::nn::cast(1e-12)).ln().to_f64().unwrap();
        let correct = (probs[BAD_CLASS] > probs[GOOD_CLASS]) == bad;

        let mut dlogits = probs;
        dlogits[y] = dlogits[y] - F::one();
        let gap = GlobalAvgPool::forward(&features);
        // logits = W·gap: dW = dlogits ⊗ gap, dgap = Wᵀ·dlogits.
        let mut grads = self.zeros_like();
        for (r, &dl) in dlogits.iter().enumerate() {
            grads.w_cls.row_mut(r).scaled_add(dl, &gap);
        }
        let dgap = self.w_cls.t().dot(&dlogits);
        let dfeat = GlobalAvgPool::backward(&dgap, features.dim().1);
        let (_, rgrads) = self.resnet.backward(&cache, &dfeat, false);
        grads.resnet = rgrads;
        Ok((loss, correct, grads))
    }

    /// Fraction of records whose predicted class matches the quality label.
    pub fn accuracy(&self, corpus: &Corpus, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(SquwaError::degenerate("accuracy over an empty index set"));
        }
        let correct: Vec<bool> = indices
            .par_iter()
            .map(|&i| {
                let bad = is_bad(&corpus.records[i], self.config.bad_threshold);
                let (logits, _) = self.forward(&corpus.records[i])?;
                Ok((logits[BAD_CLASS] > logits[GOOD_CLASS]) == bad)
            })
            .collect::<Result<_>>()?;
        Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
    }

    pub fn save(&self, path: &Path, val_accuracy: Option<f64>) -> Result<()> {
        let meta = json!({
            "model": "sq",
            "config": self.config,
            "val_accuracy": val_accuracy,
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

    pub fn load(path: &Path) -> Result<SqModel<F>> {
        let (meta, blocks) = checkpoint::read_named_blocks(path)?;
        let config: SqConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| SquwaError::version("sq checkpoint missing config"))?,
        )
        .map_err(|e| SquwaError::version(format!("bad sq config in checkpoint: {e}")))?;
        let mut model = SqModel::init(0, config)?;
        let mut tensors = model.tensors_mut();
        if tensors.len() != blocks.len() {
            return Err(SquwaError::version(format!(
                "sq checkpoint has {} blocks, model needs {}",
                blocks.len(),
                tensors.len()
            )));
        }
        for (t, (name, shape, data)) in tensors.iter_mut().zip(blocks.iter()) {
            if &t.name != name || &t.shape != shape {
                return Err(SquwaError::version(format!(
                    "sq checkpoint block '{name}' does not match tensor '{}'",
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

impl<F: Scalar> ParamTensors<F> for SqModel<F> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out: Vec<TensorRef<'_, F>> = self
            .resnet
            .tensors()
            .into_iter()
            .map(|t| TensorRef {
                name: format!("resnet.{}", t.name),
                shape: t.shape,
                data: t.data,
            })
            .collect();
        out.push(tensor_ref("w_cls", &self.w_cls));
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out: Vec<TensorMut<'_, F>> = self
            .resnet
            .tensors_mut()
            .into_iter()
            .map(|t| TensorMut {
                name: format!("resnet.{}", t.name),
                shape: t.shape,
                data: t.data,
            })
            .collect();
        out.push(tensor_mut("w_cls", &mut self.w_cls));
        out
    }
}

/// True when the record's corruption fraction marks it bad quality.
pub fn is_bad(record: &PpgRecord, threshold: f64) -> bool {
    record.corruption_fraction() > threshold
}

/// CAM-derived signal quality index.
///
/// `cam[t] = Σ_c w_cls[good, c] · feature_map[c, t]`, min-max normalized into
/// [0, 1] per record. A constant CAM (no information) maps to all 0.5.
pub fn cam_sqi<F: Scalar>(
    feature_map: &Array2<F>,
    w_cls: &Array2<F>,
    good_class: usize,
) -> Result<SqiSeries> {
    if w_cls.dim().1 != feature_map.dim().0 {
        return Err(SquwaError::shape(format!(
            "classifier expects {} channels, feature map has {}",
            w_cls.dim().1,
            feature_map.dim().0
        )));
    }
    let cam: Vec<f64> = w_cls
        .row(good_class)
        .dot(feature_map)
        .iter()
        .map(|v| v.to_f64().unwrap())
        .collect();
    let min = cam.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = cam.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return Err(SquwaError::numerical("non-finite class activation map"));
    }
    let values = if max > min {
        let inv = 1.0 / (max - min);
        Array1::from_iter(cam.iter().map(|&v| ((v - min) * inv) as f32))
    } else {
        Array1::from_elem(cam.len(), 0.5f32)
    };
    SqiSeries::new(values)
}

/// Raw (unnormalized) CAM, used by the identity tests and diagnostics.
pub fn raw_cam<F: Scalar>(feature_map: &Array2<F>, w_cls: &Array2<F>, class: usize) -> Array1<F> {
    w_cls.row(class).dot(feature_map)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub model: SqConfig,
}

impl Default for SqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            lr: 1e-3,
            seed: 7,
            model: SqConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqTrainReport {
    pub epochs: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// `ConvergenceWarning` text when validation accuracy ends below 0.8.
    pub warning: Option<String>,
}

pub const SQ_ACCURACY_FLOOR: f64 = 0.8;

/// Train the quality classifier on the corpus's train split and report
/// held-out accuracy on the validation split. Quality labels derive from the
/// ground-truth corruption fraction. Low final accuracy produces a warning in
/// the report, not an error, so callers can still inspect the model.
pub fn train_sq(corpus: &Corpus, cfg: &SqTrainConfig) -> Result<(SqModel<f32>, SqTrainReport)> {
    cfg.model.validate()?;
    if cfg.batch_size == 0 {
        return Err(SquwaError::config("batch_size must be positive"));
    }
    let train = corpus.indices(Split::Train);
    let val = corpus.indices(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(SquwaError::config(
            "sq training needs non-empty train and val splits",
        ));
    }

    let mut model = SqModel::<f32>::init(cfg.seed, cfg.model)?;
    let mut adam = Adam::new(&model);
    let mut order = train.clone();
    let mut train_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, 1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Per-record grads in a fixed order, then one deterministic sum;
            // keeps f32 accumulation independent of thread scheduling.
            let parts: Vec<(f64, SqModel<f32>)> = batch
                .par_iter()
                .map(|&i| {
                    let bad = is_bad(&corpus.records[i], cfg.model.bad_threshold);
                    let (loss, _, grads) = model.loss_grads(&corpus.records[i], bad)?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let mut grads = model.zeros_like();
            let inv = 1.0 / batch.len() as f32;
            for (loss, g) in &parts {
                epoch_loss += loss;
                grads.add_scaled(g, inv);
            }
            adam.step(&mut model, &grads, cfg.lr);
        }
        train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(SquwaError::divergence(format!(
                "sq training loss became non-finite at epoch {epoch}"
            )));
        }
    }

    let val_accuracy = model.accuracy(corpus, &val)?;
    let warning = if val_accuracy >= SQ_ACCURACY_FLOOR {
        None
    } else {
        Some(format!(
            "ConvergenceWarning: validation quality accuracy {val_accuracy:.3} below {SQ_ACCURACY_FLOOR}"
        ))
    };
    Ok((
        model,
        SqTrainReport {
            epochs: cfg.epochs,
            n_train: train.len(),
            n_val: val.len(),
            train_loss,
            val_accuracy,
            warning,
        },
    ))
}
