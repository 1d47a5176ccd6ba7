//! Classification losses: plain BCE plus three label-noise-robust
//! objectives (symmetric CE, generalized CE, joint optimization with soft
//! labels). Each loss exposes its value and the analytic gradient with
//! respect to the pre-sigmoid logit; all arithmetic runs in f64.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SquwaError};
use crate::types::Rhythm;

pub const PROB_EPS: f64 = 1e-7;

/// Loss selection with hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Sce {
        alpha: f64,
        beta: f64,
        a: f64,
    },
    Gce {
        q: f64,
    },
    Jol {
        momentum: f64,
        lambda_prior: f64,
        lambda_entropy: f64,
    },
}

impl LossKind {
    pub fn sce_default() -> Self {
        LossKind::Sce {
            alpha: 0.1,
            beta: 1.0,
            a: 4.0,
        }
    }

    pub fn gce_default() -> Self {
        LossKind::Gce { q: 0.7 }
    }

    pub fn jol_default() -> Self {
        LossKind::Jol {
            momentum: 0.9,
            lambda_prior: 0.1,
            lambda_entropy: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Bce => Ok(()),
            LossKind::Sce { alpha, beta, a } => {
                if alpha <= 0.0 || beta < 0.0 || a <= 0.0 {
                    Err(SquwaError::config(
                        "sce requires alpha > 0, beta >= 0, a > 0",
                    ))
                } else {
                    Ok(())
                }
            }
            LossKind::Gce { q } => {
                if q <= 0.0 || q > 1.0 {
                    Err(SquwaError::config("gce requires q in (0, 1]"))
                } else {
                    Ok(())
                }
            }
            LossKind::Jol {
                momentum,
                lambda_prior,
                lambda_entropy,
            } => {
                if !(0.0..=1.0).contains(&momentum) {
                    Err(SquwaError::config("jol momentum outside [0, 1]"))
                } else if lambda_prior < 0.0 || lambda_entropy < 0.0 {
                    Err(SquwaError::config(
                        "jol regularizer weights must be nonnegative",
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Sce { .. } => "sce",
            LossKind::Gce { .. } => "gce",
            LossKind::Jol { .. } => "jol",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = SquwaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(LossKind::Bce),
            "sce" => Ok(Self::sce_default()),
            "gce" => Ok(Self::gce_default()),
            "jol" => Ok(Self::jol_default()),
            other => Err(SquwaError::config(format!("unknown loss '{other}'"))),
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy on a clamped probability.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Reverse cross-entropy with `log 0 := -a` on the hard label side.
pub fn rce(p: f64, y: f64, a: f64) -> f64 {
    let p = clamp_prob(p);
    // y in {0,1}: the term with log(1) vanishes, the other gets the -a floor.
    if y >= 0.5 {
        a * (1.0 - p)
    } else {
        a * p
    }
}

/// Symmetric cross-entropy: `alpha * CE + beta * RCE`.
pub fn sce(p: f64, y: f64, alpha: f64, beta: f64, a: f64) -> f64 {
    alpha * bce(p, y) + beta * rce(p, y, a)
}

/// Generalized cross-entropy `(1 - p_y^q) / q` on the probability assigned
/// to the observed label.
pub fn gce(p: f64, y: f64, q: f64) -> f64 {
    let p_y = if y >= 0.5 { p } else { 1.0 - p };
    (1.0 - clamp_prob(p_y).powf(q)) / q
}

/// Value and d/dz of the chosen point loss at logit `z` (JOL is stateful and
/// handled by [`JolState`]).
pub fn point_loss_and_grad(kind: &LossKind, z: f64, label: Rhythm) -> (f64, f64) {
    let y = f64::from(label.as_f32());
    let p = sigmoid64(z);
    let dp_dz = p * (1.0 - p);
    match *kind {
        LossKind::Bce => (bce(p, y), p - y),
        LossKind::Sce { alpha, beta, a } => {
            let sign = if y >= 0.5 { -1.0 } else { 1.0 };
            (
                sce(p, y, alpha, beta, a),
                alpha * (p - y) + beta * a * sign * dp_dz,
            )
        }
        LossKind::Gce { q } => {
            let (p_y, dpy_dz) = if y >= 0.5 {
                (p, dp_dz)
            } else {
                (1.0 - p, -dp_dz)
            };
            let p_y = clamp_prob(p_y);
            (gce(p, y, q), -p_y.powf(q - 1.0) * dpy_dz)
        }
        LossKind::Jol { .. } => panic!("JOL is stateful; use JolState"),
    }
}

pub fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Joint-optimization state: one soft label per training record, re-estimated
/// from model predictions at every epoch boundary.
#[derive(Debug, Clone)]
pub struct JolState {
    pub soft: Vec<f64>,
    pub momentum: f64,
    pub lambda_prior: f64,
    pub lambda_entropy: f64,
    /// Positive-class prior used by the KL regularizer.
    pub prior: f64,
}

impl JolState {
    /// Soft labels start at the observed (possibly noisy) hard labels; the
    /// prior is estimated from those labels.
    pub fn new(labels: &[Rhythm], kind: &LossKind) -> Result<Self> {
        kind.validate()?;
        let LossKind::Jol {
            momentum,
            lambda_prior,
            lambda_entropy,
        } = *kind
        else {
            return Err(SquwaError::config("JolState requires a jol loss kind"));
        };
        if labels.is_empty() {
            return Err(SquwaError::config("jol needs at least one record"));
        }
        let soft: Vec<f64> = labels.iter().map(|l| f64::from(l.as_f32())).collect();
        let prior = soft.iter().sum::<f64>() / soft.len() as f64;
        Ok(Self {
            soft,
            momentum,
            lambda_prior,
            lambda_entropy,
            prior: prior.clamp(PROB_EPS, 1.0 - PROB_EPS),
        })
    }

    /// Loss and per-logit gradients for a batch of (record index, logit)
    /// pairs. The batch mean prediction feeds the prior-KL term.
    pub fn batch_loss_and_grads(&self, items: &[(usize, f64)]) -> (f64, Vec<f64>) {
        let n = items.len();
        assert!(n > 0, "empty jol batch");
        let inv_n = 1.0 / n as f64;
        let probs: Vec<f64> = items.iter().map(|&(_, z)| sigmoid64(z)).collect();
        let p_bar = clamp_prob(probs.iter().sum::<f64>() * inv_n);

        // CE against soft labels plus entropy term, averaged over the batch.
        let mut loss = 0.0;
        let mut grads = vec![0.0; n];
        for (bi, (&(idx, z), &p)) in items.iter().zip(probs.iter()).enumerate() {
            let s = self.soft[idx];
            loss += inv_n * bce(p, s);
            let entropy = -(clamp_prob(p).ln() * p + (1.0 - clamp_prob(p)).ln() * (1.0 - p));
            loss += self.lambda_entropy * inv_n * entropy;
            let dp = p * (1.0 - p);
            // d/dz of CE-to-soft is p - s; of entropy is -z * p(1-p).
            grads[bi] = inv_n * (p - s) + self.lambda_entropy * inv_n * (-z * dp);
        }

        // KL(prior || mean prediction) over {positive, negative}.
        let pi = self.prior;
        loss += self.lambda_prior
            * (pi * (pi / p_bar).ln() + (1.0 - pi) * ((1.0 - pi) / (1.0 - p_bar)).ln());
        let dkl_dpbar = -pi / p_bar + (1.0 - pi) / (1.0 - p_bar);
        for (bi, (&(_, _z), &p)) in items.iter().zip(probs.iter()).enumerate() {
            grads[bi] += self.lambda_prior * dkl_dpbar * inv_n * (p * (1.0 - p));
        }
        (loss, grads)
    }

    /// Epoch-boundary label re-estimation:
    /// `soft <- (1 - momentum) * soft + momentum * prediction`.
    pub fn update_soft_labels(&mut self, predictions: &[(usize, f64)]) {
        for &(idx, p) in predictions {
            self.soft[idx] = (1.0 - self.momentum) * self.soft[idx] + self.momentum * p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::stream_rng;
    use rand::Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bce_hand_cases() {
        assert!((bce(0.5, 1.0) - LN2).abs() < 1e-12);
        assert!((bce(0.9, 0.0) - (-(0.1f64).ln())).abs() < 1e-10);
        assert!(bce(1.0, 1.0) < 1e-6);
        assert!(bce(0.0, 0.0) < 1e-6);
    }

    #[test]
    fn sce_hand_case() {
        // CE = -ln 0.7 = 0.356675, RCE = 4 * (1 - 0.7) = 1.2.
        let v = sce(0.7, 1.0, 1.0, 1.0, 4.0);
        assert!((v - 1.5566749439387324).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sce_beta_zero_reduces_to_scaled_bce() {
        for &p in &[0.1, 0.35, 0.8] {
            let v = sce(p, 1.0, 0.25, 0.0, 4.0);
            assert!((v - 0.25 * bce(p, 1.0)).abs() < 1e-14);
        }
        assert!(sce(1.0 - 1e-7, 1.0, 0.1, 1.0, 4.0) < 1e-5);
    }

    #[test]
    fn gce_hand_cases() {
        // Direct evaluation: 0.5^0.7 = 0.6155722..., (1 - it)/0.7 = 0.5491826.
        let v = gce(0.5, 1.0, 0.7);
        assert!((v - 0.5491825618964884).abs() < 1e-12, "{v}");
        // q = 1 is exactly MAE-like.
        for &p in &[0.2, 0.5, 0.95] {
            assert!((gce(p, 1.0, 1.0) - (1.0 - p)).abs() < 1e-9);
            assert!((gce(p, 0.0, 1.0) - p).abs() < 1e-9);
        }
        assert!(gce(1.0, 1.0, 0.7).abs() < 1e-6);
    }

    #[test]
    fn losses_nonnegative() {
        let mut rng = stream_rng(31, 0);
        for _ in 0..500 {
            let p: f64 = rng.gen();
            let y = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            assert!(bce(p, y) >= 0.0);
            assert!(sce(p, y, 0.1, 1.0, 4.0) >= 0.0);
            assert!(gce(p, y, 0.7) >= 0.0);
        }
    }

    #[test]
    fn point_gradients_match_finite_differences() {
        let kinds = [
            LossKind::Bce,
            LossKind::sce_default(),
            LossKind::Sce {
                alpha: 1.0,
                beta: 0.5,
                a: 4.0,
            },
            LossKind::gce_default(),
            LossKind::Gce { q: 0.3 },
        ];
        let mut rng = stream_rng(32, 0);
        let eps = 1e-6;
        for kind in &kinds {
            for i in 0..60 {
                let z: f64 = rng.gen_range(-4.0..4.0);
                let label = if i % 2 == 0 {
                    Rhythm::Af
                } else {
                    Rhythm::NonAf
                };
                let (_, an) = point_loss_and_grad(kind, z, label);
                let (up, _) = point_loss_and_grad(kind, z + eps, label);
                let (dn, _) = point_loss_and_grad(kind, z - eps, label);
                let fd = (up - dn) / (2.0 * eps);
                assert!(
                    (fd - an).abs() < 1e-6,
                    "{}: z={z} fd={fd} an={an}",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn jol_gradients_match_finite_differences() {
        let labels = vec![
            Rhythm::Af,
            Rhythm::NonAf,
            Rhythm::Af,
            Rhythm::Af,
            Rhythm::NonAf,
        ];
        let state = JolState::new(&labels, &LossKind::jol_default()).unwrap();
        let mut rng = stream_rng(33, 0);
        let eps = 1e-6;
        for _ in 0..50 {
            let items: Vec<(usize, f64)> = (0..5).map(|i| (i, rng.gen_range(-3.0..3.0))).collect();
            let (_, grads) = state.batch_loss_and_grads(&items);
            for b in 0..items.len() {
                let mut up_items = items.clone();
                up_items[b].1 += eps;
                let (up, _) = state.batch_loss_and_grads(&up_items);
                let mut dn_items = items.clone();
                dn_items[b].1 -= eps;
                let (dn, _) = state.batch_loss_and_grads(&dn_items);
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - grads[b]).abs() < 1e-6, "fd={fd} an={}", grads[b]);
            }
        }
    }

    #[test]
    fn jol_regularizer_free_case_is_bce_to_soft() {
        let labels = vec![Rhythm::Af, Rhythm::NonAf];
        let kind = LossKind::Jol {
            momentum: 0.9,
            lambda_prior: 0.0,
            lambda_entropy: 0.0,
        };
        let state = JolState::new(&labels, &kind).unwrap();
        let items = vec![(0usize, 0.4f64), (1usize, -1.3f64)];
        let (loss, _) = state.batch_loss_and_grads(&items);
        let want = 0.5 * (bce(sigmoid64(0.4), 1.0) + bce(sigmoid64(-1.3), 0.0));
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn jol_momentum_one_jumps_to_predictions() {
        let labels = vec![Rhythm::Af, Rhythm::NonAf];
        let kind = LossKind::Jol {
            momentum: 1.0,
            lambda_prior: 0.1,
            lambda_entropy: 0.1,
        };
        let mut state = JolState::new(&labels, &kind).unwrap();
        state.update_soft_labels(&[(0, 0.5), (1, 0.5)]);
        assert_eq!(state.soft, vec![0.5, 0.5]);
    }

    #[test]
    fn jol_momentum_mixes_geometrically() {
        let labels = vec![Rhythm::Af];
        let mut state = JolState::new(&labels, &LossKind::jol_default()).unwrap();
        state.update_soft_labels(&[(0, 0.0)]);
        assert!((state.soft[0] - 0.1).abs() < 1e-12);
        state.update_soft_labels(&[(0, 0.0)]);
        assert!((state.soft[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn invalid_hyperparameters_are_config_errors() {
        assert_eq!(
            LossKind::Gce { q: 0.0 }.validate().unwrap_err().kind(),
            "ConfigError"
        );
        assert_eq!(
            LossKind::Gce { q: 1.5 }.validate().unwrap_err().kind(),
            "ConfigError"
        );
        let bad = LossKind::Jol {
            momentum: 0.9,
            lambda_prior: -0.1,
            lambda_entropy: 0.1,
        };
        assert_eq!(bad.validate().unwrap_err().kind(), "ConfigError");
        assert_eq!(
            "bogus".parse::<LossKind>().unwrap_err().kind(),
            "ConfigError"
        );
    }

    #[test]
    fn loss_names_parse_round_trip() {
        for name in ["bce", "sce", "gce", "jol"] {
            let kind: LossKind = name.parse().unwrap();
            assert_eq!(kind.name(), name);
            kind.validate().unwrap();
        }
    }
}
