//! Quality-keyed attention and the classification head.
//!
//! Hidden states (plus a fixed sinusoidal positional encoding) provide the
//! queries and values; the signal-quality index alone provides the keys
//! through a 1×k weight matrix, making the key matrix rank one. Scores are
//! scaled by √k and row-softmaxed, the context matrix is pooled to a single
//! vector, and a fully connected layer plus sigmoid yields the AF
//! probability. Because keys depend only on the SQI, a constant-quality
//! record gets identical attention rows, and low-quality timesteps can be
//! down-weighted across every query position at once.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SquwaError};
use crate::nn::{
    randn_mat, sigmoid, softmax_backward_vec, softmax_rows, stream_rng, tensor_mut, tensor_ref,
    transpose_std, Linear, ParamTensors, Scalar, TensorMut, TensorRef,
};
use crate::types::AttentionArtifacts;

/// How the T×k context matrix collapses to one context vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextPooling {
    /// Mean over the T per-query contexts (default).
    Mean,
    /// Final query position only.
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Hidden size `k`; must be even for the sinusoidal encoding.
    pub hidden: usize,
    /// Sequence length `T` the positional encoding is built for.
    pub t_len: usize,
    pub pooling: ContextPooling,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            t_len: 75,
            pooling: ContextPooling::Mean,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return Err(SquwaError::value(format!(
                "hidden size {} must be positive and even",
                self.hidden
            )));
        }
        if self.t_len == 0 {
            return Err(SquwaError::value("sequence length must be positive"));
        }
        Ok(())
    }
}

/// Fixed sinusoidal positional encoding, `(k, T)`:
/// `P[2i, t] = sin(t / 10000^(2i/k))`, `P[2i+1, t] = cos(t / 10000^(2i/k))`.
pub fn positional_encoding<F: Scalar>(k: usize, t_len: usize) -> Result<Array2<F>> {
    if k == 0 || k % 2 != 0 {
        return Err(SquwaError::value(format!(
            "positional encoding needs even k, got {k}"
        )));
    }
    let mut p = Array2::zeros((k, t_len));
    for i in 0..k / 2 {
        let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / k as f64);
        for t in 0..t_len {
            let angle = t as f64 * rate;
            p[[2 * i, t]] = crate::nn::cast(angle.sin());
            p[[2 * i + 1, t]] = crate::nn::cast(angle.cos());
        }
    }
    Ok(p)
}

/// Attention parameters. The positional encoding is fixed at construction
/// and is not a learnable tensor.
#[derive(Debug, Clone)]
pub struct SqAttention<F> {
    /// `(k, k)` query projection.
    pub w_q: Array2<F>,
    /// `(k, k)` value projection.
    pub w_v: Array2<F>,
    /// `(1, k)` key projection from the scalar per-timestep SQI.
    pub w_k: Array2<F>,
    /// Fixed `(k, T)` positional encoding.
    pub pos: Array2<F>,
    /// FC head `k -> 1`.
    pub head: Linear<F>,
    pub config: AttentionConfig,
}

/// Forward intermediates for [`SqAttention::backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    /// `(T, k)` adjusted hidden states, time-major (`H_adjᵀ`).
    a: Array2<F>,
    q: Array2<F>,
    k_mat: Array2<F>,
    v: Array2<F>,
    /// `(T, T)` row-stochastic attention weights.
    pub weights: Array2<F>,
    /// Pooled `(k)` context vector.
    pub context: Array1<F>,
    sqi: Array1<F>,
}

/// Scalar outputs of the head.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput<F> {
    pub logit: F,
    pub probability: F,
}

impl<F: Scalar> SqAttention<F> {
    pub fn init(seed: u64, config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let k = config.hidden;
        let mut rng = stream_rng(seed, 0);
        let std = (1.0 / k as f64).sqrt();
        Ok(Self {
            w_q: randn_mat(&mut rng, k, k, std),
            w_v: randn_mat(&mut rng, k, k, std),
            w_k: randn_mat(&mut rng, 1, k, 1.0),
            pos: positional_encoding(k, config.t_len)?,
            head: Linear::xavier_init(&mut rng, 1, k),
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_q: Array2::zeros(self.w_q.dim()),
            w_v: Array2::zeros(self.w_v.dim()),
            w_k: Array2::zeros(self.w_k.dim()),
            pos: self.pos.clone(),
            head: self.head.zeros_like(),
            config: self.config,
        }
    }

    /// Formula-1 projections: `(Q, K, V)`, each `(T, k)`.
    pub fn project(
        &self,
        hidden: &Array2<F>,
        sqi: &Array1<F>,
    ) -> Result<(Array2<F>, Array2<F>, Array2<F>)> {
        let (q, k_mat, v, _) = self.project_inner(hidden, sqi)?;
        Ok((q, k_mat, v))
    }

    fn project_inner(
        &self,
        hidden: &Array2<F>,
        sqi: &Array1<F>,
    ) -> Result<(Array2<F>, Array2<F>, Array2<F>, Array2<F>)> {
        let k = self.config.hidden;
        let t_len = self.config.t_len;
        if hidden.dim() != (k, t_len) {
            return Err(SquwaError::shape(format!(
                "hidden states {:?} do not match attention ({k}, {t_len})",
                hidden.dim()
            )));
        }
        if sqi.len() != t_len {
            return Err(SquwaError::shape(format!(
                "SQI length {} does not match T={t_len}",
                sqi.len()
            )));
        }
        let h_adj = hidden + &self.pos;
        let a = transpose_std(&h_adj);
        let q = a.dot(&self.w_q);
        let v = a.dot(&self.w_v);
        // K = SQIᵀ·W_K: outer product of the SQI column with the 1×k key row.
        let mut k_mat = Array2::zeros((t_len, k));
        for (t, &s) in sqi.iter().enumerate() {
            k_mat.row_mut(t).assign(&(&self.w_k.row(0) * s));
        }
        Ok((q, k_mat, v, a))
    }

    /// Full forward pass from hidden states `(k, T)` and SQI `(T)`.
    pub fn forward(
        &self,
        hidden: &Array2<F>,
        sqi: &Array1<F>,
    ) -> Result<(AttentionOutput<F>, AttentionCache<F>)> {
        let (q, k_mat, v, a) = self.project_inner(hidden, sqi)?;
        let weights = attention_weights(&q, &k_mat)?;
        let context = pool_context(&weights, &v, self.config.pooling);
        let logit = self.head.forward(&context)[0];
        let probability = sigmoid(logit);
        Ok((
            AttentionOutput { logit, probability },
            AttentionCache {
                a,
                q,
                k_mat,
                v,
                weights,
                context,
                sqi: sqi.clone(),
            },
        ))
    }

    /// Backward from `dL/dlogit`. Returns the gradient on the hidden states
    /// `(k, T)` and the parameter gradients. The SQI is an input from the
    /// frozen quality model, so no SQI gradient is produced.
    pub fn backward(&self, cache: &AttentionCache<F>, dlogit: F) -> (Array2<F>, SqAttention<F>) {
        let mut grads = self.zeros_like();
        let t_len = self.config.t_len;
        let inv_sqrt_k = F::one() / crate::nn::cast::<F>(self.config.hidden as f64).sqrt();

        let (dcontext, head_grads) = self
            .head
            .backward(&cache.context, &Array1::from_elem(1, dlogit));
        grads.head = head_grads;

        // Pooling: spread the context gradient back over the T rows.
        let mut dcontexts = Array2::<F>::zeros((t_len, self.config.hidden));
        match self.config.pooling {
            ContextPooling::Mean => {
                let inv_t = F::one() / crate::nn::cast(t_len as f64);
                for mut row in dcontexts.rows_mut() {
                    row.assign(&(&dcontext * inv_t));
                }
            }
            ContextPooling::Last => dcontexts.row_mut(t_len - 1).assign(&dcontext),
        }

        // contexts = W·V.
        let dw = dcontexts.dot(&cache.v.t());
        let dv = cache.weights.t().dot(&dcontexts);

        // Row softmax, then S = Q·Kᵀ/√k.
        let mut ds = Array2::<F>::zeros((t_len, t_len));
        for r in 0..t_len {
            let row = softmax_backward_vec(&cache.weights.row(r).to_owned(), &dw.row(r).to_owned());
            ds.row_mut(r).assign(&row);
        }
        let dq = ds.dot(&cache.k_mat) * inv_sqrt_k;
        let dk = ds.t().dot(&cache.q) * inv_sqrt_k;

        // Q = A·W_Q, V = A·W_V, K = sqi ⊗ w_k.
        grads.w_q = cache.a.t().dot(&dq);
        grads.w_v = cache.a.t().dot(&dv);
        for (t, &s) in cache.sqi.iter().enumerate() {
            grads.w_k.row_mut(0).scaled_add(s, &dk.row(t));
        }
        let mut da = dq.dot(&self.w_q.t());
        da += &dv.dot(&self.w_v.t());
        (transpose_std(&da), grads)
    }

    /// Attention-free baseline: the head applied to the column mean of the
    /// raw hidden states.
    pub fn forward_meanpool(&self, hidden: &Array2<F>) -> Result<(AttentionOutput<F>, Array1<F>)> {
        if hidden.dim().0 != self.config.hidden {
            return Err(SquwaError::shape(format!(
                "hidden states {:?} do not match attention hidden {}",
                hidden.dim(),
                self.config.hidden
            )));
        }
        let inv_t = F::one() / crate::nn::cast(hidden.dim().1 as f64);
        let pooled = hidden.sum_axis(ndarray::Axis(1)) * inv_t;
        let logit = self.head.forward(&pooled)[0];
        Ok((
            AttentionOutput {
                logit,
                probability: sigmoid(logit),
            },
            pooled,
        ))
    }

    /// Backward for [`forward_meanpool`]; only the head receives gradients
    /// besides the hidden states.
    pub fn backward_meanpool(
        &self,
        pooled: &Array1<F>,
        t_len: usize,
        dlogit: F,
    ) -> (Array2<F>, SqAttention<F>) {
        let mut grads = self.zeros_like();
        let (dpooled, head_grads) = self.head.backward(pooled, &Array1::from_elem(1, dlogit));
        grads.head = head_grads;
        let inv_t = F::one() / crate::nn::cast(t_len as f64);
        let mut dhidden = Array2::zeros((self.config.hidden, t_len));
        for (u, &g) in dpooled.iter().enumerate() {
            dhidden.row_mut(u).fill(g * inv_t);
        }
        (dhidden, grads)
    }

    /// Convert a forward pass into exportable artifacts.
    pub fn artifacts(
        &self,
        output: &AttentionOutput<F>,
        cache: &AttentionCache<F>,
    ) -> AttentionArtifacts {
        let to32 = |v: F| v.to_f64().unwrap() as f32;
        AttentionArtifacts {
            weights: cache.weights.mapv(to32),
            context: cache.context.mapv(to32),
            logit: to32(output.logit),
            probability: to32(output.probability),
        }
    }
}

/// Formulas 2–3: scaled scores and the row-stochastic attention matrix.
pub fn attention_weights<F: Scalar>(q: &Array2<F>, k_mat: &Array2<F>) -> Result<Array2<F>> {
    if q.dim().1 != k_mat.dim().1 || q.dim().0 != k_mat.dim().0 {
        return Err(SquwaError::shape(format!(
            "query {:?} and key {:?} shapes are incompatible",
            q.dim(),
            k_mat.dim()
        )));
    }
    let inv_sqrt_k = F::one() / crate::nn::cast::<F>(q.dim().1 as f64).sqrt();
    let scores = q.dot(&k_mat.t()) * inv_sqrt_k;
    let weights = softmax_rows(&scores);
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(SquwaError::numerical(
            "attention softmax produced non-finite weights",
        ));
    }
    Ok(weights)
}

/// Formula 4 plus pooling: `W·V` collapsed to one k-vector.
pub fn pool_context<F: Scalar>(
    weights: &Array2<F>,
    v: &Array2<F>,
    pooling: ContextPooling,
) -> Array1<F> {
    let contexts = weights.dot(v);
    match pooling {
        ContextPooling::Mean => {
            let inv_t = F::one() / crate::nn::cast(contexts.dim().0 as f64);
            contexts.sum_axis(ndarray::Axis(0)) * inv_t
        }
        ContextPooling::Last => contexts.row(contexts.dim().0 - 1).to_owned(),
    }
}

impl<F: Scalar> ParamTensors<F> for SqAttention<F> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        vec![
            tensor_ref("w_q", &self.w_q),
            tensor_ref("w_v", &self.w_v),
            tensor_ref("w_k", &self.w_k),
            tensor_ref("head.weight", &self.head.weight),
            tensor_ref("head.bias", &self.head.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        vec![
            tensor_mut("w_q", &mut self.w_q),
            tensor_mut("w_v", &mut self.w_v),
            tensor_mut("w_k", &mut self.w_k),
            tensor_mut("head.weight", &mut self.head.weight),
            tensor_mut("head.bias", &mut self.head.bias),
        ]
    }
}
