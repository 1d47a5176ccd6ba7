//! Adam optimizer over any [`ParamTensors`] container.
//!
//! Moments are kept in f64 regardless of the parameter scalar so update
//! arithmetic is identical across runs and across the f32/f64 builds.

use super::{cast, ParamTensors, Scalar};

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new<F: Scalar, P: ParamTensors<F>>(params: &P) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// One Adam update with the given learning rate.
    pub fn step<F: Scalar, P: ParamTensors<F>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        let g_tensors = grads.tensors();
        let mut p_tensors = params.tensors_mut();
        assert_eq!(p_tensors.len(), g_tensors.len(), "param/grad tensor count");
        assert_eq!(p_tensors.len(), self.m.len(), "optimizer state mismatch");

        for (slot, (p, g)) in p_tensors.iter_mut().zip(g_tensors.iter()).enumerate() {
            debug_assert_eq!(p.name, g.name, "tensor order mismatch");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.data.len() {
                let gi = g.data[i].to_f64().expect("finite grad");
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let upd = lr * m_hat / (v_hat.sqrt() + self.eps);
                p.data[i] = p.data[i] - cast::<F>(upd);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{tensor_mut, tensor_ref, TensorMut, TensorRef};
    use ndarray::Array1;

    struct Toy {
        w: Array1<f64>,
    }

    impl ParamTensors<f64> for Toy {
        fn tensors(&self) -> Vec<TensorRef<'_, f64>> {
            vec![tensor_ref("w", &self.w)]
        }
        fn tensors_mut(&mut self) -> Vec<TensorMut<'_, f64>> {
            vec![tensor_mut("w", &mut self.w)]
        }
    }

    #[test]
    fn matches_reference_update_sequence() {
        let mut p = Toy {
            w: Array1::from(vec![1.0, -2.0]),
        };
        let g = Toy {
            w: Array1::from(vec![0.5, -0.25]),
        };
        let mut opt = Adam::new(&p);
        let lr = 0.1;

        // Hand rollout of textbook Adam for two identical-gradient steps.
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        let mut want = [1.0f64, -2.0];
        for t in 1..=2 {
            for i in 0..2 {
                let gi = g.w[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                want[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }

        opt.step(&mut p, &g, lr);
        opt.step(&mut p, &g, lr);
        assert!((p.w[0] - want[0]).abs() < 1e-15);
        assert!((p.w[1] - want[1]).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 2);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = Toy {
            w: Array1::from(vec![3.0, -4.0]),
        };
        let mut opt = Adam::new(&p);
        for _ in 0..500 {
            let g = Toy { w: p.w.clone() }; // grad of 0.5 * ||w||^2
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p.w.iter().all(|v| v.abs() < 1e-2), "w = {:?}", p.w);
    }
}
