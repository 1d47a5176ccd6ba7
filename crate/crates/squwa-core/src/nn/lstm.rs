//! Single-layer one-directional LSTM with backpropagation through time.
//!
//! Gate order in the stacked weight matrices is `i, f, g, o`. Input
//! projections for the whole sequence run as one GEMM; only the recurrent
//! matvec is per-step.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::{randn_mat, Scalar};

#[derive(Debug, Clone)]
pub struct Lstm<F> {
    /// `(4k, n)` input weights.
    pub w_x: Array2<F>,
    /// `(4k, k)` recurrent weights.
    pub w_h: Array2<F>,
    /// `(4k)` bias; the forget slice starts at 1.
    pub bias: Array1<F>,
    pub hidden: usize,
}

/// Forward intermediates needed by BPTT.
#[derive(Debug, Clone)]
pub struct LstmCache<F> {
    /// `(T, 4k)` post-activation gates in `i, f, g, o` order.
    pub gates: Array2<F>,
    /// `(T, k)` cell states.
    pub cells: Array2<F>,
    /// `(T, k)` tanh of cell states.
    pub tanh_cells: Array2<F>,
    /// `(T, k)` hidden states.
    pub hidden: Array2<F>,
}

impl<F: Scalar> Lstm<F> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let sx = (2.0 / (input + hidden) as f64).sqrt();
        let sh = (1.0 / hidden as f64).sqrt();
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(F::one());
        Self {
            w_x: randn_mat(rng, 4 * hidden, input, sx),
            w_h: randn_mat(rng, 4 * hidden, hidden, sh),
            bias,
            hidden,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
            hidden,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w_x.dim().1, self.hidden)
    }

    /// Run over a `(T, n)` sequence from zero initial state.
    /// Returns the `(T, k)` hidden states and the cache for backward.
    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LstmCache<F>) {
        let (t_len, _) = x.dim();
        let k = self.hidden;
        // (T, 4k): input contribution plus bias, all steps at once.
        let mut z_all = x.dot(&self.w_x.t());
        for mut row in z_all.rows_mut() {
            row += &self.bias;
        }

        let mut gates = Array2::zeros((t_len, 4 * k));
        let mut cells = Array2::zeros((t_len, k));
        let mut tanh_cells = Array2::zeros((t_len, k));
        let mut hidden = Array2::zeros((t_len, k));
        let mut h_prev: Array1<F> = Array1::zeros(k);
        let mut c_prev: Array1<F> = Array1::zeros(k);

        for t in 0..t_len {
            let mut z = z_all.row(t).to_owned();
            z += &self.w_h.dot(&h_prev);
            let mut g_row = gates.row_mut(t);
            for u in 0..k {
                g_row[u] = super::sigmoid(z[u]);
                g_row[k + u] = super::sigmoid(z[k + u]);
                g_row[2 * k + u] = z[2 * k + u].tanh();
                g_row[3 * k + u] = super::sigmoid(z[3 * k + u]);
            }
            for u in 0..k {
                let c = g_row[k + u] * c_prev[u] + g_row[u] * g_row[2 * k + u];
                cells[[t, u]] = c;
                let tc = c.tanh();
                tanh_cells[[t, u]] = tc;
                hidden[[t, u]] = g_row[3 * k + u] * tc;
            }
            h_prev.assign(&hidden.row(t));
            c_prev.assign(&cells.row(t));
        }

        (
            hidden.clone(),
            LstmCache {
                gates,
                cells,
                tanh_cells,
                hidden,
            },
        )
    }

    /// BPTT given `dh_out`, the loss gradient on every hidden state.
    /// Returns `(dx, grads)`.
    pub fn backward(
        &self,
        x: &Array2<F>,
        cache: &LstmCache<F>,
        dh_out: &Array2<F>,
    ) -> (Array2<F>, Lstm<F>) {
        let (t_len, _) = x.dim();
        let k = self.hidden;
        let mut dz_all = Array2::<F>::zeros((t_len, 4 * k));
        let mut dh_next: Array1<F> = Array1::zeros(k);
        let mut dc_next: Array1<F> = Array1::zeros(k);

        for t in (0..t_len).rev() {
            let g = cache.gates.row(t);
            let mut dz = dz_all.row_mut(t);
            for u in 0..k {
                let dh = dh_out[[t, u]] + dh_next[u];
                let o = g[3 * k + u];
                let tc = cache.tanh_cells[[t, u]];
                let dc = dh * o * (F::one() - tc * tc) + dc_next[u];
                let i = g[u];
                let f = g[k + u];
                let gg = g[2 * k + u];
                let c_prev = if t > 0 {
                    cache.cells[[t - 1, u]]
                } else {
                    F::zero()
                };
                dz[u] = dc * gg * i * (F::one() - i);
                dz[k + u] = dc * c_prev * f * (F::one() - f);
                dz[2 * k + u] = dc * i * (F::one() - gg * gg);
                dz[3 * k + u] = dh * tc * o * (F::one() - o);
                dc_next[u] = dc * f;
            }
            let dz = dz_all.row(t);
            dh_next = self.w_h.t().dot(&dz);
        }

        let mut grads = self.zeros_like();
        grads.w_x = dz_all.t().dot(x);
        // h_prev matrix: row t holds h_{t-1}, row 0 is zero.
        let mut h_prev = Array2::<F>::zeros((t_len, k));
        if t_len > 1 {
            h_prev
                .slice_mut(s![1.., ..])
                .assign(&cache.hidden.slice(s![..t_len - 1, ..]));
        }
        grads.w_h = dz_all.t().dot(&h_prev);
        for row in dz_all.rows() {
            grads.bias += &row;
        }
        let dx = dz_all.dot(&self.w_x);
        (dx, grads)
    }
}
