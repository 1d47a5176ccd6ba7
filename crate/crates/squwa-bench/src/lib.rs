//! Shared fixtures for the pipeline benchmarks: one deterministic full-length
//! record and a uniform SQI series.

use ndarray::Array1;
use rand::Rng;

use squwa_core::nn::stream_rng;
use squwa_core::synth::{synth_pulse_train, SynthConfig};
use squwa_core::types::{PpgRecord, Rhythm, SqiSeries};

/// One 30-second AF pulse train at the default sampling rate.
pub fn record() -> PpgRecord {
    let mut rng = stream_rng(99, 0);
    synth_pulse_train(Rhythm::Af, &SynthConfig::default(), &mut rng).expect("synth")
}

/// Uniform(0, 1) quality indices of length `t_len`.
pub fn uniform_sqi(t_len: usize) -> SqiSeries {
    let mut rng = stream_rng(99, 1);
    SqiSeries::new(Array1::from_shape_fn(t_len, |_| {
        rng.gen_range(0.0f32..=1.0)
    }))
    .expect("values in range")
}
