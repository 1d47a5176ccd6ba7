//! Composite signal generation.
//!
//! The raw signal and its two derivatives are each decomposed at three kernel
//! scales (banks of `m` same-padded filters collapsed back to one component by
//! a 1×1 convolution), giving nine equal-length components. A small attention
//! subnet looks at the raw channel and emits simplex weights that recombine
//! the components into a single composite signal.
//!
//! Because bank filters and the 1×1 collapse are both linear, each bank is
//! algebraically one convolution with the *effective kernel*
//! `e = Σ_j collapse_j · filter_j` (plus a folded bias). Forward and backward
//! run on that collapsed form, so the per-record cost is independent of `m`;
//! a brute-force oracle in the tests pins the equivalence.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SquwaError};
use crate::nn::conv::{relu_backward, relu_inplace, shifted_dot};
use crate::nn::{
    randn_mat, randn_vec, softmax_backward_vec, softmax_vec, tensor_mut, tensor_ref, Conv1d,
    GlobalAvgPool, Linear, ParamTensors, Scalar, TensorMut, TensorRef,
};

pub const DEFAULT_KERNEL_LENGTHS: [usize; 3] = [119, 479, 799];
pub const N_CHANNELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompositorConfig {
    /// Odd kernel lengths, one per scale. Ablations drop a scale by removing
    /// its entry; the bank count is `3 * kernel_lengths.len()`.
    pub kernel_lengths: Vec<usize>,
    pub kernels_per_bank: usize,
    pub subnet_filters: usize,
    pub subnet_kernel: usize,
    pub subnet_stride: usize,
    /// Per-record weights. A per-timestep weight map would be the other
    /// reading of the architecture diagram; not implemented.
    pub per_record_weights: bool,
}

impl Default for CompositorConfig {
    fn default() -> Self {
        Self {
            kernel_lengths: DEFAULT_KERNEL_LENGTHS.to_vec(),
            kernels_per_bank: 8,
            subnet_filters: 8,
            subnet_kernel: 31,
            subnet_stride: 4,
            per_record_weights: true,
        }
    }
}

impl CompositorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_lengths.is_empty() {
            return Err(SquwaError::config("at least one kernel scale required"));
        }
        if self.kernel_lengths.iter().any(|&k| k % 2 == 0 || k == 0) {
            return Err(SquwaError::config("kernel lengths must be odd"));
        }
        if self.kernels_per_bank == 0 || self.subnet_filters == 0 {
            return Err(SquwaError::config("filter counts must be positive"));
        }
        if self.subnet_kernel % 2 == 0 || self.subnet_stride == 0 {
            return Err(SquwaError::config(
                "subnet kernel must be odd, stride positive",
            ));
        }
        if !self.per_record_weights {
            return Err(SquwaError::config(
                "per-timestep weights are not implemented",
            ));
        }
        Ok(())
    }

    pub fn n_banks(&self) -> usize {
        N_CHANNELS * self.kernel_lengths.len()
    }

    /// Bank index -> (channel, scale) in channel-major order.
    pub fn bank_layout(&self, bank: usize) -> (usize, usize) {
        (
            bank / self.kernel_lengths.len(),
            bank % self.kernel_lengths.len(),
        )
    }
}

/// One (channel, scale) filter bank with its 1×1 collapse.
#[derive(Debug, Clone)]
pub struct Bank<F> {
    /// `(m, k)` filters over a single input channel.
    pub filters: Array2<F>,
    pub filter_bias: Array1<F>,
    /// `(m)` collapse weights.
    pub collapse: Array1<F>,
    /// Scalar collapse bias (length-1 array so it enumerates as a tensor).
    pub collapse_bias: Array1<F>,
}

impl<F: Scalar> Bank<F> {
    fn init(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Self {
        let std = (1.0 / k as f64).sqrt();
        Self {
            filters: randn_mat(rng, m, k, std),
            filter_bias: Array1::zeros(m),
            collapse: randn_vec(rng, m, (1.0 / m as f64).sqrt()),
            collapse_bias: Array1::zeros(1),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            filters: Array2::zeros(self.filters.dim()),
            filter_bias: Array1::zeros(self.filter_bias.len()),
            collapse: Array1::zeros(self.collapse.len()),
            collapse_bias: Array1::zeros(1),
        }
    }

    /// Collapse to one effective kernel and bias.
    fn effective(&self) -> (Array1<F>, F) {
        let e = self.collapse.dot(&self.filters);
        let beta = self.collapse.dot(&self.filter_bias) + self.collapse_bias[0];
        (e, beta)
    }
}

/// Composite output: the fused signal and the simplex weights that built it.
#[derive(Debug, Clone)]
pub struct CompositeSignal<F> {
    pub values: Array1<F>,
    pub component_weights: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct Compositor<F> {
    pub banks: Vec<Bank<F>>,
    pub subnet_conv: Conv1d<F>,
    pub subnet_fc: Linear<F>,
    pub config: CompositorConfig,
}

/// Forward intermediates for [`Compositor::backward`].
#[derive(Debug, Clone)]
pub struct CompositorCache<F> {
    /// `(3, L)` input channels.
    channels: Array2<F>,
    /// `(n_banks, L)` components.
    components: Array2<F>,
    /// Post-ReLU subnet conv activations.
    subnet_act: Array2<F>,
    gap: Array1<F>,
    pub weights: Array1<F>,
}

impl<F: Scalar> Compositor<F> {
    pub fn init(rng: &mut ChaCha8Rng, config: CompositorConfig) -> Result<Self> {
        config.validate()?;
        let mut banks = Vec::with_capacity(config.n_banks());
        for b in 0..config.n_banks() {
            let (_, scale) = config.bank_layout(b);
            banks.push(Bank::init(
                rng,
                config.kernels_per_bank,
                config.kernel_lengths[scale],
            ));
        }
        let subnet_conv = Conv1d::he_init(
            rng,
            config.subnet_filters,
            1,
            config.subnet_kernel,
            config.subnet_stride,
        );
        let subnet_fc = Linear::xavier_init(rng, config.n_banks(), config.subnet_filters);
        Ok(Self {
            banks,
            subnet_conv,
            subnet_fc,
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            banks: self.banks.iter().map(|b| b.zeros_like()).collect(),
            subnet_conv: self.subnet_conv.zeros_like(),
            subnet_fc: self.subnet_fc.zeros_like(),
            config: self.config.clone(),
        }
    }

    /// Run every bank over its channel: `(3, L)` -> `(n_banks, L)`.
    pub fn decompose(&self, channels: &Array2<F>) -> Result<Array2<F>> {
        let (c, l) = channels.dim();
        if c != N_CHANNELS {
            return Err(SquwaError::shape(format!(
                "expected 3 input channels, got {c}"
            )));
        }
        let mut components = Array2::zeros((self.banks.len(), l));
        for (b, bank) in self.banks.iter().enumerate() {
            let (channel, _) = self.config.bank_layout(b);
            let (e, beta) = bank.effective();
            let x = channels.row(channel);
            let x = x.as_slice().unwrap();
            let mut row = components.row_mut(b);
            let row = row.as_slice_mut().unwrap();
            let pad = (e.len() as isize - 1) / 2;
            let ek = e.as_slice().unwrap();
            for (t, out) in row.iter_mut().enumerate() {
                // same-padded correlation: Σ_j e[j] · x[t + j - pad]
                *out = beta + dot_window(ek, x, t as isize - pad);
            }
        }
        Ok(components)
    }

    /// Subnet weights from the raw channel, then the convex recombination.
    pub fn attend(&self, raw: &Array1<F>, components: &Array2<F>) -> Result<CompositeSignal<F>> {
        if components.dim().0 != self.banks.len() || components.dim().1 != raw.len() {
            return Err(SquwaError::shape(
                "components shape does not match banks/input length",
            ));
        }
        let weights = self.subnet_weights(raw).0;
        let values = weights.dot(components);
        Ok(CompositeSignal {
            values,
            component_weights: weights,
        })
    }

    fn subnet_weights(&self, raw: &Array1<F>) -> (Array1<F>, (Array2<F>, Array1<F>)) {
        let x = raw.view().insert_axis(ndarray::Axis(0)).to_owned();
        let mut act = self.subnet_conv.forward(&x);
        relu_inplace(&mut act);
        let gap = GlobalAvgPool::forward(&act);
        let logits = self.subnet_fc.forward(&gap);
        (softmax_vec(&logits), (act, gap))
    }

    /// Full forward pass: channels `(3, L)` -> composite plus cache.
    pub fn forward(
        &self,
        channels: &Array2<F>,
    ) -> Result<(CompositeSignal<F>, CompositorCache<F>)> {
        let components = self.decompose(channels)?;
        let raw = channels.row(0).to_owned();
        let (weights, (subnet_act, gap)) = self.subnet_weights(&raw);
        let values = weights.dot(&components);
        Ok((
            CompositeSignal {
                values,
                component_weights: weights.clone(),
            },
            CompositorCache {
                channels: channels.clone(),
                components,
                subnet_act,
                gap,
                weights,
            },
        ))
    }

    /// Backward from the gradient on the composite values. Input gradients
    /// are not produced: the channels come straight from the record.
    pub fn backward(&self, cache: &CompositorCache<F>, dvalues: &Array1<F>) -> Compositor<F> {
        let mut grads = self.zeros_like();
        let n_banks = self.banks.len();
        let dv = dvalues.as_slice().unwrap();

        // Split the gradient between components (weighted by w) and weights
        // (dotted with each component).
        let mut dweights = Array1::<F>::zeros(n_banks);
        for b in 0..n_banks {
            let comp = cache.components.row(b);
            let comp = comp.as_slice().unwrap();
            dweights[b] = shifted_dot(dv, comp, 0);

            let w_b = cache.weights[b];
            let (channel, scale) = self.config.bank_layout(b);
            let k = self.config.kernel_lengths[scale];
            let pad = (k as isize - 1) / 2;
            let x = cache.channels.row(channel);
            let x = x.as_slice().unwrap();

            // d(effective kernel)[j] = w_b * Σ_t dv[t] · x[t + j - pad]
            let mut de = Array1::<F>::zeros(k);
            for j in 0..k {
                de[j] = w_b * shifted_dot(dv, x, j as isize - pad);
            }
            let dbeta = w_b * dv.iter().cloned().sum::<F>();

            // Unfold the effective-kernel gradient back onto the bank params.
            let bank = &self.banks[b];
            let g = &mut grads.banks[b];
            for m in 0..bank.collapse.len() {
                let v = bank.collapse[m];
                let filt = bank.filters.row(m);
                g.collapse[m] = de.dot(&filt) + dbeta * bank.filter_bias[m];
                g.filters.row_mut(m).scaled_add(v, &de);
                g.filter_bias[m] = v * dbeta;
            }
            g.collapse_bias[0] = dbeta;
        }

        // Through softmax and the subnet.
        let dlogits = softmax_backward_vec(&cache.weights, &dweights);
        let (dgap, fc_grads) = self.subnet_fc.backward(&cache.gap, &dlogits);
        grads.subnet_fc = fc_grads;
        let mut dact = GlobalAvgPool::backward(&dgap, cache.subnet_act.dim().1);
        relu_backward(&cache.subnet_act, &mut dact);
        let raw = cache
            .channels
            .row(0)
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let (_, conv_grads) = self.subnet_conv.backward(&raw, &dact, false);
        grads.subnet_conv = conv_grads;
        grads
    }
}

/// `Σ_j e[j] · x[j + offset]`, zero outside `x`.
#[inline]
fn dot_window<F: Scalar>(e: &[F], x: &[F], offset: isize) -> F {
    shifted_dot(e, x, offset)
}

impl<F: Scalar> ParamTensors<F> for Compositor<F> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        for (b, bank) in self.banks.iter().enumerate() {
            out.push(tensor_ref(format!("bank{b}.filters"), &bank.filters));
            out.push(tensor_ref(
                format!("bank{b}.filter_bias"),
                &bank.filter_bias,
            ));
            out.push(tensor_ref(format!("bank{b}.collapse"), &bank.collapse));
            out.push(tensor_ref(
                format!("bank{b}.collapse_bias"),
                &bank.collapse_bias,
            ));
        }
        out.push(tensor_ref("subnet.conv.weight", &self.subnet_conv.weight));
        out.push(tensor_ref("subnet.conv.bias", &self.subnet_conv.bias));
        out.push(tensor_ref("subnet.fc.weight", &self.subnet_fc.weight));
        out.push(tensor_ref("subnet.fc.bias", &self.subnet_fc.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        for (b, bank) in self.banks.iter_mut().enumerate() {
            out.push(tensor_mut(format!("bank{b}.filters"), &mut bank.filters));
            out.push(tensor_mut(
                format!("bank{b}.filter_bias"),
                &mut bank.filter_bias,
            ));
            out.push(tensor_mut(format!("bank{b}.collapse"), &mut bank.collapse));
            out.push(tensor_mut(
                format!("bank{b}.collapse_bias"),
                &mut bank.collapse_bias,
            ));
        }
        out.push(tensor_mut(
            "subnet.conv.weight",
            &mut self.subnet_conv.weight,
        ));
        out.push(tensor_mut("subnet.conv.bias", &mut self.subnet_conv.bias));
        out.push(tensor_mut("subnet.fc.weight", &mut self.subnet_fc.weight));
        out.push(tensor_mut("subnet.fc.bias", &mut self.subnet_fc.bias));
        out
    }
}

/// Brute-force reference: run all `m` filters, then the 1×1 collapse.
/// Used by tests and the oracle-equivalence acceptance check.
pub fn decompose_reference<F: Scalar>(comp: &Compositor<F>, channels: &Array2<F>) -> Array2<F> {
    let l = channels.dim().1;
    let mut out = Array2::zeros((comp.banks.len(), l));
    for (b, bank) in comp.banks.iter().enumerate() {
        let (channel, scale) = comp.config.bank_layout(b);
        let k = comp.config.kernel_lengths[scale];
        let pad = (k as isize - 1) / 2;
        let x = channels.row(channel);
        let m = bank.collapse.len();
        for t in 0..l {
            let mut acc = bank.collapse_bias[0];
            for j in 0..m {
                let mut conv = bank.filter_bias[j];
                for u in 0..k {
                    let idx = t as isize + u as isize - pad;
                    if idx >= 0 && (idx as usize) < l {
                        conv = conv + bank.filters[[j, u]] * x[idx as usize];
                    }
                }
                acc = acc + bank.collapse[j] * conv;
            }
            out[[b, t]] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::stream_rng;

    fn tiny_config() -> CompositorConfig {
        CompositorConfig {
            kernel_lengths: vec![5, 9, 13],
            kernels_per_bank: 3,
            subnet_filters: 4,
            subnet_kernel: 7,
            subnet_stride: 2,
            per_record_weights: true,
        }
    }

    fn random_channels(rng: &mut ChaCha8Rng, l: usize) -> Array2<f64> {
        crate::nn::randn_mat(rng, 3, l, 1.0)
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_components() {
        let mut rng = stream_rng(40, 0);
        let comp = Compositor::<f64>::init(&mut rng, tiny_config()).unwrap();
        let channels = Array2::zeros((3, 50));
        let components = comp.decompose(&channels).unwrap();
        assert!(components.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_bank_is_identity() {
        let mut rng = stream_rng(41, 0);
        let mut comp = Compositor::<f64>::init(&mut rng, tiny_config()).unwrap();
        // Bank 0 reads the raw channel at scale 0 (k=5). One unit tap at the
        // center of filter 0, collapse one-hot on filter 0.
        let bank = &mut comp.banks[0];
        bank.filters.fill(0.0);
        bank.filters[[0, 2]] = 1.0;
        bank.filter_bias.fill(0.0);
        bank.collapse.fill(0.0);
        bank.collapse[0] = 1.0;
        bank.collapse_bias[0] = 0.0;

        let mut rng2 = stream_rng(41, 1);
        let channels = random_channels(&mut rng2, 64);
        let components = comp.decompose(&channels).unwrap();
        for t in 0..64 {
            assert!((components[[0, t]] - channels[[0, t]]).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_kernel_matches_brute_force_oracle() {
        for seed in 0..4 {
            let mut rng = stream_rng(42, seed);
            let comp = Compositor::<f64>::init(&mut rng, tiny_config()).unwrap();
            let channels = random_channels(&mut rng, 71);
            let fast = comp.decompose(&channels).unwrap();
            let slow = decompose_reference(&comp, &channels);
            let max_err = fast
                .iter()
                .zip(slow.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-10, "seed {seed}: max err {max_err}");
        }
    }

    #[test]
    fn weights_live_on_the_simplex() {
        let mut rng = stream_rng(43, 0);
        let comp = Compositor::<f32>::init(&mut rng, tiny_config()).unwrap();
        for i in 0..20 {
            let mut r = stream_rng(43, i + 1);
            let channels = crate::nn::randn_mat::<f32>(&mut r, 3, 96, 1.0);
            let (sig, _) = comp.forward(&channels).unwrap();
            let sum: f32 = sig.component_weights.sum();
            assert!((sum - 1.0).abs() < 1e-6, "weight sum {sum}");
            assert!(sig.component_weights.iter().all(|&w| w > 0.0));
            assert_eq!(sig.values.len(), 96);
        }
    }

    #[test]
    fn identical_components_recombine_to_themselves() {
        let mut rng = stream_rng(44, 0);
        let comp = Compositor::<f64>::init(&mut rng, tiny_config()).unwrap();
        let raw = crate::nn::randn_vec::<f64>(&mut rng, 80, 1.0);
        let mut components = Array2::zeros((9, 80));
        for mut row in components.rows_mut() {
            row.assign(&raw);
        }
        let sig = comp.attend(&raw, &components).unwrap();
        for t in 0..80 {
            assert!((sig.values[t] - raw[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_one_hot_weights_select_one_component() {
        let mut rng = stream_rng(45, 0);
        let mut comp = Compositor::<f64>::init(&mut rng, tiny_config()).unwrap();
        // Saturate the FC bias so softmax is (numerically) one-hot on bank 4.
        comp.subnet_fc.weight.fill(0.0);
        comp.subnet_fc.bias.fill(-60.0);
        comp.subnet_fc.bias[4] = 60.0;
        let channels = random_channels(&mut rng, 60);
        let components = comp.decompose(&channels).unwrap();
        let sig = comp
            .attend(&channels.row(0).to_owned(), &components)
            .unwrap();
        for t in 0..60 {
            assert!((sig.values[t] - components[[4, t]]).abs() < 1e-9);
        }
    }

    #[test]
    fn weighted_sum_matches_explicit_oracle() {
        let mut rng = stream_rng(46, 0);
        let comp = Compositor::<f64>::init(&mut rng, tiny_config()).unwrap();
        let channels = random_channels(&mut rng, 55);
        let (sig, cache) = comp.forward(&channels).unwrap();
        for t in 0..55 {
            let mut want = 0.0;
            for b in 0..9 {
                want += cache.weights[b] * cache.components[[b, t]];
            }
            assert!((sig.values[t] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = CompositorConfig {
            kernel_lengths: vec![3, 7],
            kernels_per_bank: 2,
            subnet_filters: 3,
            subnet_kernel: 5,
            subnet_stride: 2,
            per_record_weights: true,
        };
        let mut rng = stream_rng(47, 0);
        let comp = Compositor::<f64>::init(&mut rng, cfg).unwrap();
        let channels = random_channels(&mut rng, 40);
        let proj = crate::nn::randn_vec::<f64>(&mut rng, 40, 1.0);
        let loss = |c: &Compositor<f64>| {
            let (sig, _) = c.forward(&channels).unwrap();
            sig.values.dot(&proj)
        };

        let (_, cache) = comp.forward(&channels).unwrap();
        let grads = comp.backward(&cache, &proj);

        let names: Vec<(String, usize)> = comp
            .tensors()
            .iter()
            .map(|t| (t.name.clone(), t.data.len()))
            .collect();
        let flat: Vec<f64> = grads
            .tensors()
            .iter()
            .flat_map(|t| t.data.to_vec())
            .collect();
        let eps = 1e-6;
        let mut offset = 0;
        for (name, len) in &names {
            for local in [0usize, len / 3, len - 1] {
                let mut cp = comp.clone();
                {
                    let mut ts = cp.tensors_mut();
                    let t = ts.iter_mut().find(|t| &t.name == name).unwrap();
                    t.data[local] += eps;
                }
                let up = loss(&cp);
                {
                    let mut ts = cp.tensors_mut();
                    let t = ts.iter_mut().find(|t| &t.name == name).unwrap();
                    t.data[local] -= 2.0 * eps;
                }
                let dn = loss(&cp);
                let fd = (up - dn) / (2.0 * eps);
                let an = flat[offset + local];
                let scale = fd.abs().max(an.abs()).max(1e-4);
                assert!(
                    ((fd - an) / scale).abs() < 1e-5,
                    "{name}[{local}]: fd={fd} an={an}"
                );
            }
            offset += len;
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = CompositorConfig::default();
        cfg.kernel_lengths = vec![120];
        assert_eq!(
            Compositor::<f32>::init(&mut stream_rng(0, 0), cfg)
                .unwrap_err()
                .kind(),
            "ConfigError"
        );
        let mut cfg2 = CompositorConfig::default();
        cfg2.kernel_lengths.clear();
        assert!(cfg2.validate().is_err());
        // Dropping a scale leaves six banks and a matching subnet width.
        let cfg3 = CompositorConfig {
            kernel_lengths: vec![479, 799],
            ..CompositorConfig::default()
        };
        assert_eq!(cfg3.n_banks(), 6);
        let comp = Compositor::<f32>::init(&mut stream_rng(1, 0), cfg3).unwrap();
        assert_eq!(comp.subnet_fc.weight.dim().0, 6);
        assert_eq!(comp.banks.len(), 6);
    }
}
