//! Dense layers: `y = W x + b` for vectors and row-batched matrices.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::{randn_mat, Scalar};

#[derive(Debug, Clone)]
pub struct Linear<F> {
    /// `(out, in)`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    /// Xavier-initialized dense layer.
    pub fn xavier_init(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Self {
        let std = (2.0 / (out + inp) as f64).sqrt();
        Self {
            weight: randn_mat(rng, out, inp, std),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (o, i) = self.weight.dim();
        Self::zeros(o, i)
    }

    pub fn forward(&self, x: &Array1<F>) -> Array1<F> {
        self.weight.dot(x) + &self.bias
    }

    /// Gradients for a single vector input: returns `(dx, grads)`.
    pub fn backward(&self, x: &Array1<F>, dout: &Array1<F>) -> (Array1<F>, Linear<F>) {
        let dx = self.weight.t().dot(dout);
        let mut grads = self.zeros_like();
        // outer product dout ⊗ x
        for (o, &g) in dout.iter().enumerate() {
            let mut row = grads.weight.row_mut(o);
            row.scaled_add(g, x);
        }
        grads.bias.assign(dout);
        (dx, grads)
    }

    /// Apply to each row of `x` (`rows × in` → `rows × out`).
    pub fn forward_rows(&self, x: &Array2<F>) -> Array2<F> {
        let mut out = x.dot(&self.weight.t());
        for mut row in out.rows_mut() {
            row += &self.bias;
        }
        out
    }

    /// Backward for [`Self::forward_rows`]: returns `(dx, grads)`.
    pub fn backward_rows(&self, x: &Array2<F>, dout: &Array2<F>) -> (Array2<F>, Linear<F>) {
        let dx = dout.dot(&self.weight);
        let mut grads = self.zeros_like();
        grads.weight = dout.t().dot(x);
        for row in dout.rows() {
            grads.bias += &row;
        }
        (dx, grads)
    }
}
