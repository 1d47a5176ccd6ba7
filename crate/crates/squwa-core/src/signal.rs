//! Derivative, resampling, and normalization primitives feeding the
//! compositor. All functions are pure and reentrant.

use crate::error::{Result, SquwaError};
use crate::types::PpgRecord;

/// Raw signal plus its first two temporal derivatives, all length `L`.
#[derive(Debug, Clone)]
pub struct DerivativeChannels {
    pub raw: Vec<f32>,
    pub d1: Vec<f32>,
    pub d2: Vec<f32>,
}

/// Central-difference derivatives scaled by the sampling rate, with
/// replicated edge samples so length is preserved.
///
/// `d1[i]` approximates the instantaneous rate of change and `d2[i]` the
/// curvature of the waveform.
pub fn derivatives(record: &PpgRecord) -> DerivativeChannels {
    let x = &record.samples;
    let n = x.len();
    let fs = record.fs as f32;
    let at = |i: isize| -> f32 {
        let j = i.clamp(0, n as isize - 1) as usize;
        x[j]
    };
    let mut d1 = vec![0.0f32; n];
    let mut d2 = vec![0.0f32; n];
    for i in 0..n {
        let i = i as isize;
        let prev = at(i - 1);
        let here = at(i);
        let next = at(i + 1);
        d1[i as usize] = (next - prev) * fs / 2.0;
        d2[i as usize] = (next - 2.0 * here + prev) * fs * fs;
    }
    DerivativeChannels {
        raw: x.clone(),
        d1,
        d2,
    }
}

/// Band-limited resampling via windowed-sinc interpolation.
///
/// Output length is `round(len * fs_out / fs_in)`. Equal rates return the
/// input unchanged.
pub fn resample(x: &[f32], fs_in: f64, fs_out: f64) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(SquwaError::value("cannot resample empty input"));
    }
    if fs_in <= 0.0 || fs_out <= 0.0 {
        return Err(SquwaError::value(format!(
            "sampling rates must be positive (fs_in={fs_in}, fs_out={fs_out})"
        )));
    }
    if (fs_in - fs_out).abs() < f64::EPSILON * fs_in.max(fs_out) {
        return Ok(x.to_vec());
    }
    let ratio = fs_out / fs_in;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    // Cutoff slightly below the tighter Nyquist limit; 32 zero crossings on
    // each side with a Hann window keeps mid-band distortion < 1e-3.
    let cutoff = 0.97 * ratio.min(1.0) / 2.0;
    let half_width = (32.0 / (2.0 * cutoff)).ceil() as isize;
    let mut out = vec![0.0f32; out_len];
    for (t, o) in out.iter_mut().enumerate() {
        // Position of this output sample on the input grid.
        let center = t as f64 / ratio;
        let lo = (center.floor() as isize - half_width).max(0);
        let hi = (center.floor() as isize + half_width).min(x.len() as isize - 1);
        let mut acc = 0.0f64;
        for n in lo..=hi {
            let d = center - n as f64;
            let sinc_arg = 2.0 * cutoff * d;
            let sinc = if sinc_arg.abs() < 1e-12 {
                1.0
            } else {
                let p = std::f64::consts::PI * sinc_arg;
                p.sin() / p
            };
            let w = 0.5 + 0.5 * (std::f64::consts::PI * d / half_width as f64).cos();
            acc += x[n as usize] as f64 * 2.0 * cutoff * sinc * w;
        }
        *o = acc as f32;
    }
    Ok(out)
}

/// Z-normalize to zero mean and unit standard deviation (population form).
/// Constant inputs map to all zeros rather than dividing by zero, since
/// corrupted spans can be exactly flat.
pub fn znormalize(x: &[f32]) -> Vec<f32> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = x
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; n];
    }
    x.iter()
        .map(|&v| ((v as f64 - mean) / std) as f32)
        .collect()
}

/// Simple local-maximum peak detector used by the synthetic-data sanity
/// checks: peaks must exceed `min_height` and be at least `min_distance`
/// samples apart (greedy, highest first within a violation).
pub fn find_peaks(x: &[f32], min_height: f32, min_distance: usize) -> Vec<usize> {
    let n = x.len();
    let mut candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| x[i] > min_height && x[i] >= x[i - 1] && x[i] > x[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap());
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Inter-peak intervals in seconds.
pub fn peak_intervals(peaks: &[usize], fs: f64) -> Vec<f64> {
    peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / fs)
        .collect()
}

/// Coefficient of variation (std/mean) of a sample; 0 for fewer than two
/// values or a zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean.abs() < 1e-12 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    var.sqrt() / mean
}
