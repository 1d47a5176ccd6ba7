//! Synthetic PPG corpus generation.
//!
//! Records are pulse trains whose beat-to-beat (RR) interval variability is
//! controlled per rhythm class: AF draws intervals with a high coefficient of
//! variation, NSR with a low one. Each beat is a systolic Gaussian plus a
//! smaller dicrotic bump. Artifact corruption overwrites contiguous spans
//! with one of four morphologies and sets the ground-truth quality mask
//! exactly on the overwritten samples, so downstream quality models can be
//! scored against an oracle.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SquwaError};
use crate::types::{PpgRecord, Rhythm};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_records: usize,
    /// Fraction of patients generated in AF.
    pub af_fraction: f64,
    pub fs: f64,
    pub duration_s: f64,
    /// Uniform range the per-record base heart rate is drawn from.
    pub hr_range_bpm: (f64, f64),
    /// Coefficient of variation of RR intervals for the AF class.
    pub af_rr_cv: f64,
    /// Same for the NSR class; must be smaller than `af_rr_cv`.
    pub nsr_rr_cv: f64,
    /// Per-record corruption fraction is drawn uniformly from this range.
    pub corruption_fraction_range: (f64, f64),
    /// Relative weights over {flatline, noise burst, baseline wander, dropout}.
    pub corruption_kind_weights: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 1000,
            af_fraction: 0.5,
            fs: 80.0,
            duration_s: 30.0,
            hr_range_bpm: (55.0, 95.0),
            af_rr_cv: 0.25,
            nsr_rr_cv: 0.03,
            corruption_fraction_range: (0.0, 0.5),
            corruption_kind_weights: [1.0, 1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(SquwaError::config("n_records must be positive"));
        }
        if !(0.0..=1.0).contains(&self.af_fraction) {
            return Err(SquwaError::config("af_fraction outside [0, 1]"));
        }
        if self.fs <= 0.0 || self.duration_s <= 0.0 {
            return Err(SquwaError::config("fs and duration_s must be positive"));
        }
        if self.hr_range_bpm.0 > self.hr_range_bpm.1 || self.hr_range_bpm.0 <= 0.0 {
            return Err(SquwaError::config(
                "hr_range_bpm must be a positive ordered range",
            ));
        }
        if self.af_rr_cv <= self.nsr_rr_cv {
            return Err(SquwaError::config(
                "af_rr_cv must exceed nsr_rr_cv: AF is the irregular class",
            ));
        }
        if self.nsr_rr_cv < 0.0 {
            return Err(SquwaError::config("nsr_rr_cv must be nonnegative"));
        }
        let (lo, hi) = self.corruption_fraction_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(SquwaError::config(
                "corruption_fraction_range not an ordered subrange of [0, 1]",
            ));
        }
        if self.corruption_kind_weights.iter().any(|&w| w < 0.0)
            || self.corruption_kind_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(SquwaError::config(
                "corruption_kind_weights must be nonnegative and not all zero",
            ));
        }
        Ok(())
    }

    pub fn record_len(&self) -> usize {
        (self.fs * self.duration_s).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    Flatline,
    NoiseBurst,
    BaselineWander,
    AmplitudeDropout,
}

const KINDS: [CorruptionKind; 4] = [
    CorruptionKind::Flatline,
    CorruptionKind::NoiseBurst,
    CorruptionKind::BaselineWander,
    CorruptionKind::AmplitudeDropout,
];

/// Generate one clean record of the given rhythm class.
///
/// Beats are placed at RR intervals drawn from a normal distribution with the
/// class CV, clamped to a physiological band. The quality mask is all zeros.
pub fn synth_pulse_train(
    rhythm: Rhythm,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpgRecord> {
    cfg.validate()?;
    let len = cfg.record_len();
    let mut samples = vec![0.0f32; len];

    let hr = rng.gen_range(cfg.hr_range_bpm.0..=cfg.hr_range_bpm.1);
    let mean_rr = 60.0 / hr;
    let cv = match rhythm {
        Rhythm::Af => cfg.af_rr_cv,
        Rhythm::NonAf => cfg.nsr_rr_cv,
    };
    let rr_dist = Normal::new(mean_rr, cv * mean_rr)
        .map_err(|_| SquwaError::config("bad RR distribution"))?;
    // AF also shows beat-to-beat amplitude irregularity (pulse deficit).
    let amp_jitter = match rhythm {
        Rhythm::Af => 0.25,
        Rhythm::NonAf => 0.06,
    };

    let mut t = rng.gen_range(0.2..0.6) * mean_rr;
    while t < cfg.duration_s + mean_rr {
        let amp = (1.0 + amp_jitter * rng.gen_range(-1.0f64..1.0)).max(0.3);
        let rr = if cv > 0.0 {
            rr_dist.sample(rng).clamp(0.3, 2.0)
        } else {
            mean_rr
        };
        add_beat(&mut samples, cfg.fs, t, amp as f32, rr);
        t += rr;
    }

    Ok(PpgRecord {
        samples,
        fs: cfg.fs,
        label: rhythm,
        quality_mask: Some(vec![0u8; len]),
        record_id: String::new(),
    })
}

/// One beat: systolic Gaussian at `t0` plus a dicrotic bump a third of an RR
/// interval later.
fn add_beat(samples: &mut [f32], fs: f64, t0: f64, amp: f32, rr: f64) {
    let sys_w = 0.065; // seconds
    let dic_w = 0.10;
    let dic_dt = 0.32 * rr;
    let dic_amp = amp * 0.35;
    write_gaussian(samples, fs, t0, sys_w, amp);
    write_gaussian(samples, fs, t0 + dic_dt, dic_w, dic_amp);
}

fn write_gaussian(samples: &mut [f32], fs: f64, center_s: f64, width_s: f64, amp: f32) {
    let half = 4.0 * width_s;
    let lo = ((center_s - half) * fs).floor().max(0.0) as usize;
    let hi = (((center_s + half) * fs).ceil() as usize).min(samples.len());
    for i in lo..hi {
        let dt = i as f64 / fs - center_s;
        samples[i] += amp * (-0.5 * (dt / width_s).powi(2)).exp() as f32;
    }
}

/// Overwrite contiguous spans totaling `round(fraction * len)` samples with
/// artifacts and mark exactly those samples in the quality mask.
pub fn corrupt(
    record: &PpgRecord,
    fraction: f64,
    kind_weights: &[f64; 4],
    rng: &mut ChaCha8Rng,
) -> Result<PpgRecord> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SquwaError::value(format!(
            "corruption fraction {fraction} outside [0, 1]"
        )));
    }
    let len = record.samples.len();
    let mut out = record.clone();
    let mut mask = vec![0u8; len];
    let target = (fraction * len as f64).round() as usize;
    if target == 0 {
        out.quality_mask = Some(mask);
        return Ok(out);
    }

    let kind_dist = WeightedIndex::new(kind_weights)
        .map_err(|_| SquwaError::value("bad corruption kind weights"))?;
    // Carve spans out of the free gaps so spans never overlap and the total
    // is hit exactly.
    let mut gaps: Vec<(usize, usize)> = vec![(0, len)]; // [start, end)
    let mut remaining = target;
    while remaining > 0 && !gaps.is_empty() {
        let span_nominal = ((rng.gen_range(0.5..3.0) * record.fs) as usize).max(8);
        let span = span_nominal.min(remaining);
        // Pick a gap weighted by capacity.
        let weights: Vec<usize> = gaps.iter().map(|(s, e)| e - s).collect();
        let gi = WeightedIndex::new(&weights)
            .map(|d| d.sample(rng))
            .unwrap_or(0);
        let (gs, ge) = gaps.swap_remove(gi);
        let cap = ge - gs;
        let span = span.min(cap);
        let start = gs + rng.gen_range(0..=cap - span);
        let end = start + span;

        apply_kind(
            &mut out.samples,
            start,
            end,
            KINDS[kind_dist.sample(rng)],
            rng,
        );
        for m in &mut mask[start..end] {
            *m = 1;
        }
        remaining -= span;
        if start > gs {
            gaps.push((gs, start));
        }
        if end < ge {
            gaps.push((end, ge));
        }
    }

    out.quality_mask = Some(mask);
    Ok(out)
}

fn apply_kind(
    samples: &mut [f32],
    start: usize,
    end: usize,
    kind: CorruptionKind,
    rng: &mut ChaCha8Rng,
) {
    match kind {
        CorruptionKind::Flatline => {
            let held = samples[start];
            for s in &mut samples[start..end] {
                *s = held;
            }
        }
        CorruptionKind::NoiseBurst => {
            let amp = rng.gen_range(0.8..1.6);
            let dist = Normal::new(0.0, amp).expect("positive std");
            for s in &mut samples[start..end] {
                *s += dist.sample(rng) as f32;
            }
        }
        CorruptionKind::BaselineWander => {
            let amp = rng.gen_range(1.5..3.0);
            let freq = rng.gen_range(0.15..0.5);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for (i, s) in samples[start..end].iter_mut().enumerate() {
                *s += (amp * (std::f64::consts::TAU * freq * i as f64 / 80.0 + phase).sin()) as f32;
            }
        }
        CorruptionKind::AmplitudeDropout => {
            let scale = rng.gen_range(0.03..0.15) as f32;
            for s in &mut samples[start..end] {
                *s *= scale;
            }
        }
    }
}

/// Flip exactly `round(rate * n)` labels, chosen uniformly at random.
/// Returns the sorted flipped indices.
pub fn flip_labels(
    records: &mut [PpgRecord],
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(SquwaError::value(format!(
            "flip rate {rate} outside [0, 1]"
        )));
    }
    let n = records.len();
    let n_flips = (rate * n as f64).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(n_flips).collect();
    chosen.sort_unstable();
    for &i in &chosen {
        records[i].label = records[i].label.flipped();
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auroc;
    use crate::nn::stream_rng;
    use crate::signal::{coefficient_of_variation, find_peaks, peak_intervals};

    fn detect_cv(record: &PpgRecord) -> f64 {
        let max = record.samples.iter().cloned().fold(f32::MIN, f32::max);
        let peaks = find_peaks(&record.samples, 0.45 * max, (0.25 * record.fs) as usize);
        let ivals = peak_intervals(&peaks, record.fs);
        coefficient_of_variation(&ivals)
    }

    #[test]
    fn nsr_at_fixed_rate_is_metronomic() {
        let cfg = SynthConfig {
            hr_range_bpm: (60.0, 60.0),
            nsr_rr_cv: 0.0,
            ..SynthConfig::default()
        };
        let mut rng = stream_rng(5, 0);
        let r = synth_pulse_train(Rhythm::NonAf, &cfg, &mut rng).unwrap();
        let max = r.samples.iter().cloned().fold(f32::MIN, f32::max);
        let peaks = find_peaks(&r.samples, 0.45 * max, 20);
        assert!(peaks.len() >= 28, "expected ~30 beats, got {}", peaks.len());
        for w in peaks.windows(2) {
            let gap = (w[1] - w[0]) as i64 - 80;
            assert!(gap.abs() <= 2, "interval {} samples", w[1] - w[0]);
        }
    }

    #[test]
    fn af_has_target_interval_variability() {
        let cfg = SynthConfig::default();
        for stream in 0..8 {
            let mut rng = stream_rng(17, stream);
            let r = synth_pulse_train(Rhythm::Af, &cfg, &mut rng).unwrap();
            let cv = detect_cv(&r);
            assert!((0.15..=0.35).contains(&cv), "stream {stream}: cv={cv}");
        }
    }

    #[test]
    fn same_seed_same_record() {
        let cfg = SynthConfig::default();
        let a = synth_pulse_train(Rhythm::Af, &cfg, &mut stream_rng(9, 3)).unwrap();
        let b = synth_pulse_train(Rhythm::Af, &cfg, &mut stream_rng(9, 3)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SynthConfig {
            af_rr_cv: 0.02,
            nsr_rr_cv: 0.03,
            ..SynthConfig::default()
        };
        let err = synth_pulse_train(Rhythm::Af, &cfg, &mut stream_rng(0, 0)).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn corrupt_zero_fraction_is_identity() {
        let cfg = SynthConfig::default();
        let r = synth_pulse_train(Rhythm::NonAf, &cfg, &mut stream_rng(1, 0)).unwrap();
        let c = corrupt(&r, 0.0, &[1.0; 4], &mut stream_rng(1, 1)).unwrap();
        assert_eq!(c.samples, r.samples);
        assert!(c.quality_mask.unwrap().iter().all(|&m| m == 0));
    }

    #[test]
    fn corrupt_full_fraction_masks_everything() {
        let cfg = SynthConfig::default();
        let r = synth_pulse_train(Rhythm::NonAf, &cfg, &mut stream_rng(2, 0)).unwrap();
        let c = corrupt(&r, 1.0, &[1.0; 4], &mut stream_rng(2, 1)).unwrap();
        assert!(c.quality_mask.unwrap().iter().all(|&m| m == 1));
    }

    #[test]
    fn corrupt_hits_requested_fraction() {
        let cfg = SynthConfig::default();
        let r = synth_pulse_train(Rhythm::Af, &cfg, &mut stream_rng(3, 0)).unwrap();
        let c = corrupt(&r, 0.3, &[1.0; 4], &mut stream_rng(3, 1)).unwrap();
        let frac = c.corruption_fraction();
        assert!((0.28..=0.32).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn corrupt_preserves_clean_samples_and_label() {
        let cfg = SynthConfig::default();
        let r = synth_pulse_train(Rhythm::Af, &cfg, &mut stream_rng(4, 0)).unwrap();
        let c = corrupt(&r, 0.4, &[1.0; 4], &mut stream_rng(4, 1)).unwrap();
        assert_eq!(c.label, r.label);
        let mask = c.quality_mask.as_ref().unwrap();
        for i in 0..r.samples.len() {
            if mask[i] == 0 {
                assert_eq!(c.samples[i], r.samples[i], "clean sample {i} changed");
            }
        }
        // Spans are contiguous blocks: count transitions, expect few.
        let transitions = mask.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(transitions <= 40, "{transitions} mask transitions");
    }

    #[test]
    fn corrupt_rejects_bad_fraction() {
        let cfg = SynthConfig::default();
        let r = synth_pulse_train(Rhythm::Af, &cfg, &mut stream_rng(4, 0)).unwrap();
        let err = corrupt(&r, 1.5, &[1.0; 4], &mut stream_rng(0, 0)).unwrap_err();
        assert_eq!(err.kind(), "ValueError");
    }

    #[test]
    fn flip_labels_exact_count_and_involution() {
        let cfg = SynthConfig {
            duration_s: 5.0,
            ..SynthConfig::default()
        };
        let mut records: Vec<PpgRecord> = (0..1000)
            .map(|i| {
                let rhythm = if i % 2 == 0 {
                    Rhythm::Af
                } else {
                    Rhythm::NonAf
                };
                synth_pulse_train(rhythm, &cfg, &mut stream_rng(100, i as u64)).unwrap()
            })
            .collect();
        let originals: Vec<Rhythm> = records.iter().map(|r| r.label).collect();

        let flipped = flip_labels(&mut records, 0.25, &mut stream_rng(100, 9999)).unwrap();
        assert_eq!(flipped.len(), 250);
        let changed = records
            .iter()
            .zip(&originals)
            .filter(|(r, &o)| r.label != o)
            .count();
        assert_eq!(changed, 250);

        // Flipping the same indices again restores the originals.
        for &i in &flipped {
            records[i].label = records[i].label.flipped();
        }
        assert!(records.iter().zip(&originals).all(|(r, &o)| r.label == o));

        let mut rs = records.clone();
        let none = flip_labels(&mut rs, 0.0, &mut stream_rng(1, 1)).unwrap();
        assert!(none.is_empty());
        assert!(rs.iter().zip(&records).all(|(a, b)| a.label == b.label));
    }

    #[test]
    fn interval_cv_threshold_separates_classes() {
        // The synthetic task must be learnable: a bare interval-CV score
        // should separate AF from NSR nearly perfectly on clean data.
        let cfg = SynthConfig::default();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let rhythm = if i % 2 == 0 {
                Rhythm::Af
            } else {
                Rhythm::NonAf
            };
            let r = synth_pulse_train(rhythm, &cfg, &mut stream_rng(55, i as u64)).unwrap();
            scores.push(detect_cv(&r) as f32);
            labels.push(rhythm);
        }
        let auc = auroc(&scores, &labels).unwrap();
        assert!(auc > 0.95, "cv-threshold AUROC {auc}");
    }
}
