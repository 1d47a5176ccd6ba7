//! Feature branch: a residual CNN over the composite signal followed by a
//! one-directional LSTM, producing the hidden-state sequence the attention
//! stage consumes.
//!
//! The extractor is swappable: the full residual CNN, or a plain averaging
//! downsampler with the same factor (used by the no-feature-extractor
//! ablation so the sequence lengths stay aligned with the SQI series).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SquwaError};
use crate::nn::resnet::RESNET_DOWNSAMPLE;
use crate::nn::{
    stream_rng, tensor_mut, tensor_ref, transpose_std, Lstm, LstmCache, ParamTensors, ResNet1d,
    ResNetCache, ResNetConfig, Scalar, TensorMut, TensorRef,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Residual CNN, downsampling by 32.
    Cnn,
    /// Non-learned mean over 32-sample windows (ablation).
    AvgPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub extractor: ExtractorKind,
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    /// LSTM hidden units `k`.
    pub hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::Cnn,
            widths: [16, 32, 64, 128],
            blocks: [2, 2, 2, 2],
            hidden: 64,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(SquwaError::config("hidden size must be positive"));
        }
        if self.extractor == ExtractorKind::Cnn
            && (self.widths.iter().any(|&w| w == 0) || self.blocks.iter().any(|&b| b == 0))
        {
            return Err(SquwaError::config(
                "widths and block counts must be positive",
            ));
        }
        Ok(())
    }

    /// Feature dimension `n` entering the LSTM.
    pub fn feature_dim(&self) -> usize {
        match self.extractor {
            ExtractorKind::Cnn => self.widths[3],
            ExtractorKind::AvgPool => 1,
        }
    }

    pub fn resnet(&self) -> ResNetConfig {
        ResNetConfig {
            in_channels: 1,
            widths: self.widths,
            blocks: self.blocks,
        }
    }

    /// Sequence length for an `l`-sample composite.
    pub fn out_len(&self, l: usize) -> usize {
        match self.extractor {
            ExtractorKind::Cnn => self.resnet().out_len(l),
            ExtractorKind::AvgPool => l / RESNET_DOWNSAMPLE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fusion<F> {
    pub cnn: Option<ResNet1d<F>>,
    pub lstm: Lstm<F>,
    pub config: FusionConfig,
}

/// Forward intermediates for [`Fusion::backward`].
#[derive(Debug, Clone)]
pub struct FusionCache<F> {
    resnet: Option<ResNetCache<F>>,
    /// `(T, n)` LSTM input (features, time-major).
    x_lstm: Array2<F>,
    lstm: LstmCache<F>,
    /// Composite length, for scatter in the avg-pool backward.
    l_in: usize,
}

impl<F: Scalar> Fusion<F> {
    pub fn init(seed: u64, config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, 0);
        let cnn = match config.extractor {
            ExtractorKind::Cnn => Some(ResNet1d::init(&mut rng, config.resnet())),
            ExtractorKind::AvgPool => None,
        };
        let lstm = Lstm::init(&mut rng, config.feature_dim(), config.hidden);
        Ok(Self { cnn, lstm, config })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cnn: self.cnn.as_ref().map(|c| c.zeros_like()),
            lstm: self.lstm.zeros_like(),
            config: self.config,
        }
    }

    /// Composite signal -> `(n, T)` feature sequence.
    pub fn extract_features(&self, composite: &Array1<F>) -> Result<Array2<F>> {
        Ok(self.extract_cached(composite)?.0)
    }

    fn extract_cached(&self, composite: &Array1<F>) -> Result<(Array2<F>, Option<ResNetCache<F>>)> {
        let l = composite.len();
        if self.config.out_len(l) == 0 || l < 2 * RESNET_DOWNSAMPLE {
            return Err(SquwaError::shape(format!(
                "composite of {l} samples is too short for the feature extractor"
            )));
        }
        match &self.cnn {
            Some(cnn) => {
                let x = composite.view().insert_axis(Axis(0)).to_owned();
                let (features, cache) = cnn.forward(&x);
                Ok((features, Some(cache)))
            }
            None => {
                let t = l / RESNET_DOWNSAMPLE;
                let mut features = Array2::zeros((1, t));
                let inv = F::one() / crate::nn::cast(RESNET_DOWNSAMPLE as f64);
                for ti in 0..t {
                    let lo = ti * RESNET_DOWNSAMPLE;
                    let sum: F = composite
                        .slice(ndarray::s![lo..lo + RESNET_DOWNSAMPLE])
                        .iter()
                        .cloned()
                        .sum();
                    features[[0, ti]] = sum * inv;
                }
                Ok((features, None))
            }
        }
    }

    /// Feature sequence `(n, T)` -> hidden states `(k, T)`, zero initial state.
    pub fn recur(&self, features: &Array2<F>) -> Result<Array2<F>> {
        if features.dim().0 != self.config.feature_dim() {
            return Err(SquwaError::shape(format!(
                "feature dim {} does not match LSTM input {}",
                features.dim().0,
                self.config.feature_dim()
            )));
        }
        let x = transpose_std(features);
        let (h, _) = self.lstm.forward(&x);
        Ok(transpose_std(&h))
    }

    /// Full branch: composite -> hidden states `(k, T)` with cache.
    pub fn forward(&self, composite: &Array1<F>) -> Result<(Array2<F>, FusionCache<F>)> {
        let (features, resnet) = self.extract_cached(composite)?;
        let x_lstm = transpose_std(&features);
        let (h, lstm) = self.lstm.forward(&x_lstm);
        Ok((
            transpose_std(&h),
            FusionCache {
                resnet,
                x_lstm,
                lstm,
                l_in: composite.len(),
            },
        ))
    }

    /// Backward from the gradient on the hidden states `(k, T)`. Returns the
    /// gradient on the composite signal and the parameter gradients.
    pub fn backward(&self, cache: &FusionCache<F>, dhidden: &Array2<F>) -> (Array1<F>, Fusion<F>) {
        let mut grads = self.zeros_like();
        let dh = transpose_std(dhidden);
        let (dx_lstm, lstm_grads) = self.lstm.backward(&cache.x_lstm, &cache.lstm, &dh);
        grads.lstm = lstm_grads;
        let dfeat = transpose_std(&dx_lstm);
        let dcomposite = match (&self.cnn, &cache.resnet) {
            (Some(cnn), Some(rc)) => {
                let (dx, cnn_grads) = cnn.backward(rc, &dfeat, true);
                grads.cnn = Some(cnn_grads);
                dx.expect("input gradient requested").row(0).to_owned()
            }
            _ => {
                let mut dx = Array1::zeros(cache.l_in);
                let inv = F::one() / crate::nn::cast(RESNET_DOWNSAMPLE as f64);
                for (ti, &g) in dfeat.row(0).iter().enumerate() {
                    let lo = ti * RESNET_DOWNSAMPLE;
                    for u in 0..RESNET_DOWNSAMPLE {
                        dx[lo + u] = g * inv;
                    }
                }
                dx
            }
        };
        (dcomposite, grads)
    }
}

impl<F: Scalar> ParamTensors<F> for Fusion<F> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        if let Some(cnn) = &self.cnn {
            out.extend(cnn.tensors().into_iter().map(|t| TensorRef {
                name: format!("cnn.{}", t.name),
                shape: t.shape,
                data: t.data,
            }));
        }
        out.push(tensor_ref("lstm.w_x", &self.lstm.w_x));
        out.push(tensor_ref("lstm.w_h", &self.lstm.w_h));
        out.push(tensor_ref("lstm.bias", &self.lstm.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        if let Some(cnn) = &mut self.cnn {
            out.extend(cnn.tensors_mut().into_iter().map(|t| TensorMut {
                name: format!("cnn.{}", t.name),
                shape: t.shape,
                data: t.data,
            }));
        }
        out.push(tensor_mut("lstm.w_x", &mut self.lstm.w_x));
        out.push(tensor_mut("lstm.w_h", &mut self.lstm.w_h));
        out.push(tensor_mut("lstm.bias", &mut self.lstm.bias));
        out
    }
}
