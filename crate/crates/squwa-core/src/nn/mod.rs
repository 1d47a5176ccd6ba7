//! Minimal neural-network plumbing: layers with hand-written forward and
//! backward passes, an Adam optimizer, and a named-tensor protocol shared by
//! the optimizer and the checkpoint format.
//!
//! Everything is generic over [`Scalar`] so the production path runs in f32
//! while gradient verification runs the same code in f64.

pub mod adam;
pub mod conv;
pub mod linear;
pub mod lstm;
pub mod resnet;

pub use adam::Adam;
pub use conv::{Conv1d, GlobalAvgPool, MaxPool2};
pub use linear::Linear;
pub use lstm::{Lstm, LstmCache};
pub use resnet::{ResNet1d, ResNetCache, ResNetConfig};

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Floating-point scalar usable in every layer.
pub trait Scalar: ndarray::NdFloat + std::iter::Sum + Send + Sync {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossless-enough cast from f64 literals into the working scalar type.
#[inline]
pub fn cast<F: Scalar>(x: f64) -> F {
    F::from(x).expect("f64 -> scalar cast")
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

/// Mutable view of one named parameter tensor.
pub struct TensorMut<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [F],
}

/// A parameter container that can enumerate its tensors in a stable order.
/// The order defines optimizer-state slots and checkpoint block layout.
pub trait ParamTensors<F: Scalar> {
    fn tensors(&self) -> Vec<TensorRef<'_, F>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>>;

    /// Total number of scalar parameters.
    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Elementwise `self += rhs * scale`, tensor by tensor.
    fn add_scaled(&mut self, rhs: &Self, scale: F) {
        let mut mine = self.tensors_mut();
        let theirs = rhs.tensors();
        assert_eq!(mine.len(), theirs.len(), "tensor count mismatch");
        for (m, t) in mine.iter_mut().zip(theirs.iter()) {
            debug_assert_eq!(m.shape, t.shape, "shape mismatch on {}", m.name);
            for (a, b) in m.data.iter_mut().zip(t.data.iter()) {
                *a = *a + *b * scale;
            }
        }
    }

    /// Set every tensor to zero.
    fn zero(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = F::zero();
            }
        }
    }
}

/// Borrow an ndarray as a named tensor (arrays here are always standard layout).
pub fn tensor_ref<'a, F: Scalar, D: ndarray::Dimension>(
    name: impl Into<String>,
    a: &'a ndarray::Array<F, D>,
) -> TensorRef<'a, F> {
    TensorRef {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    }
}

/// Mutable variant of [`tensor_ref`].
pub fn tensor_mut<'a, F: Scalar, D: ndarray::Dimension>(
    name: impl Into<String>,
    a: &'a mut ndarray::Array<F, D>,
) -> TensorMut<'a, F> {
    TensorMut {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
    }
}

/// Transpose into an owned array in standard (row-major) layout.
/// `a.t().to_owned()` keeps the flipped strides, which breaks the
/// slice-based conv kernels; this forces a relayout.
pub fn transpose_std<F: Scalar>(a: &Array2<F>) -> Array2<F> {
    let (r, c) = a.dim();
    let mut out = Array2::zeros((c, r));
    for i in 0..r {
        for j in 0..c {
            out[[j, i]] = a[[i, j]];
        }
    }
    out
}

/// Deterministic per-stream RNG derivation: one master seed fans out to
/// independent streams (records, model init, shuffles) without correlation.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state ^ stream.rotate_left(17));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gaussian-filled vector with the given standard deviation.
pub fn randn_vec<F: Scalar>(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Array1<F> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    Array1::from_iter((0..len).map(|_| cast(dist.sample(rng))))
}

pub fn randn_mat<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<F> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| cast(dist.sample(rng)))
}

pub fn randn_cube<F: Scalar>(
    rng: &mut ChaCha8Rng,
    d0: usize,
    d1: usize,
    d2: usize,
    std: f64,
) -> Array3<F> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    Array3::from_shape_fn((d0, d1, d2), |_| cast(dist.sample(rng)))
}

/// Uniform in [-r, r].
pub fn uniform_mat<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| cast(rng.gen_range(-r..r)))
}

/// Numerically careful sigmoid.
#[inline]
pub fn sigmoid<F: Scalar>(z: F) -> F {
    let one = F::one();
    if z >= F::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

/// Row-wise softmax with max subtraction. The normalizing sum is
/// accumulated in f64 so row sums stay within 1e-6 of one even in f32.
pub fn softmax_rows<F: Scalar>(scores: &Array2<F>) -> Array2<F> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += (*v).to_f64().expect("finite exp");
        }
        for v in row.iter_mut() {
            *v = cast((*v).to_f64().expect("finite") / denom);
        }
    }
    out
}

/// Softmax over a vector (same stabilization as [`softmax_rows`]).
pub fn softmax_vec<F: Scalar>(logits: &Array1<F>) -> Array1<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut out = logits.mapv(|v| (v - max).exp());
    let denom: f64 = out.iter().map(|v| v.to_f64().expect("finite")).sum();
    out.mapv_inplace(|v| cast(v.to_f64().expect("finite") / denom));
    out
}

///// Backward through a softmax given the output `y` and upstream `dy`:
/// `dx = y .* (dy - dot(dy, y))`.
pub fn softmax_backward_vec<F: Scalar>(y: &Array1<F>, dy: &Array1<F>) -> Array1<F> {
    let dot = y.dot(dy);
    Array1::from_iter(y.iter().zip(dy.iter()).map(|(&yi, &di)| yi * (di - dot)))
}
