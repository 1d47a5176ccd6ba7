//! 1-D residual network over `(channels, time)` maps.
//!
//! Stem: conv k7 stride 2 → ReLU → max-pool 2, then four stages of basic
//! blocks with stage strides `[1, 2, 2, 2]`, for a fixed 32× temporal
//! downsample. No normalization layers: records pass through one at a time,
//! so each block's second convolution is instead zero-initialized, which
//! keeps the residual branch silent at the start of training and the
//! activations well-scaled without batch statistics.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::conv::{conv_out_len, relu_backward, relu_inplace, Conv1d, MaxPool2};
use super::{tensor_mut, tensor_ref, ParamTensors, Scalar, TensorMut, TensorRef};

/// Total temporal downsample applied by [`ResNet1d`].
pub const RESNET_DOWNSAMPLE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResNetConfig {
    pub in_channels: usize,
    /// Channel width of each of the four stages.
    pub widths: [usize; 4],
    /// Basic blocks per stage.
    pub blocks: [usize; 4],
}

impl ResNetConfig {
    pub fn out_channels(&self) -> usize {
        self.widths[3]
    }

    pub fn out_len(&self, t_in: usize) -> usize {
        // stem stride 2, pool 2, stage strides 1/2/2/2
        let mut t = conv_out_len(t_in, 2) / 2;
        for stage in 0..4 {
            t = conv_out_len(t, if stage == 0 { 1 } else { 2 });
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct BasicBlock<F> {
    pub conv1: Conv1d<F>,
    /// Zero-initialized at construction.
    pub conv2: Conv1d<F>,
    /// 1×1 projection when the block changes width or stride.
    pub shortcut: Option<Conv1d<F>>,
}

impl<F: Scalar> BasicBlock<F> {
    fn init(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, stride: usize) -> Self {
        let conv1 = Conv1d::he_init(rng, c_out, c_in, 3, stride);
        let conv2 = Conv1d::zeros(c_out, c_out, 3, 1);
        let shortcut = if stride != 1 || c_in != c_out {
            Some(Conv1d::he_init(rng, c_out, c_in, 1, stride))
        } else {
            None
        };
        Self {
            conv1,
            conv2,
            shortcut,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            shortcut: self.shortcut.as_ref().map(|s| s.zeros_like()),
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    x: Array2<F>,
    /// Post-ReLU output of conv1.
    a1: Array2<F>,
    /// Post-ReLU block output.
    y: Array2<F>,
}

/// Forward intermediates for [`ResNet1d::backward`].
#[derive(Debug, Clone)]
pub struct ResNetCache<F> {
    stem_in: Array2<F>,
    /// Post-ReLU stem output (max-pool input).
    stem_act: Array2<F>,
    pool_arg: Vec<u8>,
    blocks: Vec<BlockCache<F>>,
}

#[derive(Debug, Clone)]
pub struct ResNet1d<F> {
    pub stem: Conv1d<F>,
    /// Stage-major, flattened.
    pub blocks: Vec<BasicBlock<F>>,
    pub config: ResNetConfig,
}

impl<F: Scalar> ResNet1d<F> {
    pub fn init(rng: &mut ChaCha8Rng, config: ResNetConfig) -> Self {
        let stem = Conv1d::he_init(rng, config.widths[0], config.in_channels, 7, 2);
        let mut blocks = Vec::new();
        let mut c_in = config.widths[0];
        for stage in 0..4 {
            let c_out = config.widths[stage];
            let stage_stride = if stage == 0 { 1 } else { 2 };
            for b in 0..config.blocks[stage] {
                let stride = if b == 0 { stage_stride } else { 1 };
                blocks.push(BasicBlock::init(rng, c_in, c_out, stride));
                c_in = c_out;
            }
        }
        Self {
            stem,
            blocks,
            config,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stem: self.stem.zeros_like(),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            config: self.config,
        }
    }

    /// `(in_channels, T)` → `(widths[3], T / 32)`, plus the backward cache.
    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, ResNetCache<F>) {
        let mut stem_act = self.stem.forward(x);
        relu_inplace(&mut stem_act);
        let (pool_out, pool_arg) = MaxPool2::forward(&stem_act);

        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut cur = pool_out;
        for block in &self.blocks {
            let x_in = cur;
            let mut a1 = block.conv1.forward(&x_in);
            relu_inplace(&mut a1);
            let mut y = block.conv2.forward(&a1);
            match &block.shortcut {
                Some(sc) => y += &sc.forward(&x_in),
                None => y += &x_in,
            }
            relu_inplace(&mut y);
            blocks.push(BlockCache {
                x: x_in,
                a1,
                y: y.clone(),
            });
            cur = y;
        }

        (
            cur,
            ResNetCache {
                stem_in: x.clone(),
                stem_act,
                pool_arg,
                blocks,
            },
        )
    }

    /// Backward pass. `need_dx` controls whether the gradient w.r.t. the
    /// network input is materialized. Returns `(dx, grads)`.
    pub fn backward(
        &self,
        cache: &ResNetCache<F>,
        dout: &Array2<F>,
        need_dx: bool,
    ) -> (Option<Array2<F>>, ResNet1d<F>) {
        let mut grads = self.zeros_like();
        let mut dy = dout.clone();

        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[bi];
            relu_backward(&bc.y, &mut dy);
            let ds = dy; // gradient at the residual sum
            let (da1, g2) = block.conv2.backward(&bc.a1, &ds, true);
            grads.blocks[bi].conv2 = g2;
            let mut da1 = da1.unwrap();
            relu_backward(&bc.a1, &mut da1);
            let (dx1, g1) = block.conv1.backward(&bc.x, &da1, true);
            grads.blocks[bi].conv1 = g1;
            let mut dx = dx1.unwrap();
            match &block.shortcut {
                Some(sc) => {
                    let (dxs, gs) = sc.backward(&bc.x, &ds, true);
                    dx += &dxs.unwrap();
                    grads.blocks[bi].shortcut = Some(gs);
                }
                None => dx += &ds,
            }
            dy = dx;
        }

        let dpool = MaxPool2::backward(&dy, &cache.pool_arg, cache.stem_act.dim().1);
        let mut dstem = dpool;
        relu_backward(&cache.stem_act, &mut dstem);
        let (dx, gstem) = self.stem.backward(&cache.stem_in, &dstem, need_dx);
        grads.stem = gstem;
        (dx, grads)
    }
}

impl<F: Scalar> ParamTensors<F> for ResNet1d<F> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = vec![
            tensor_ref("stem.weight", &self.stem.weight),
            tensor_ref("stem.bias", &self.stem.bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(tensor_ref(
                format!("block{i}.conv1.weight"),
                &b.conv1.weight,
            ));
            out.push(tensor_ref(format!("block{i}.conv1.bias"), &b.conv1.bias));
            out.push(tensor_ref(
                format!("block{i}.conv2.weight"),
                &b.conv2.weight,
            ));
            out.push(tensor_ref(format!("block{i}.conv2.bias"), &b.conv2.bias));
            if let Some(sc) = &b.shortcut {
                out.push(tensor_ref(format!("block{i}.shortcut.weight"), &sc.weight));
                out.push(tensor_ref(format!("block{i}.shortcut.bias"), &sc.bias));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = vec![
            tensor_mut("stem.weight", &mut self.stem.weight),
            tensor_mut("stem.bias", &mut self.stem.bias),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push(tensor_mut(
                format!("block{i}.conv1.weight"),
                &mut b.conv1.weight,
            ));
            out.push(tensor_mut(
                format!("block{i}.conv1.bias"),
                &mut b.conv1.bias,
            ));
            out.push(tensor_mut(
                format!("block{i}.conv2.weight"),
                &mut b.conv2.weight,
            ));
            out.push(tensor_mut(
                format!("block{i}.conv2.bias"),
                &mut b.conv2.bias,
            ));
            if let Some(sc) = &mut b.shortcut {
                out.push(tensor_mut(
                    format!("block{i}.shortcut.weight"),
                    &mut sc.weight,
                ));
                out.push(tensor_mut(format!("block{i}.shortcut.bias"), &mut sc.bias));
            }
        }
        out
    }
}
