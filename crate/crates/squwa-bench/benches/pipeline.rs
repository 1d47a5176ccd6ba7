//! Criterion benchmarks over the real pipeline kernels at full record scale:
//! multi-scale composition, the CNN-LSTM feature stage, quality-keyed
//! attention, and whole-model forward/backward passes.

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::Rng;

use squwa_bench::{record, uniform_sqi};
use squwa_core::attention::{AttentionConfig, ContextPooling, SqAttention};
use squwa_core::compositor::{Compositor, CompositorConfig};
use squwa_core::nn::stream_rng;
use squwa_core::sqmodel::{SqConfig, SqModel};
use squwa_core::trainer::{build_variant, model_channels, ModelConfig, Variant, VariantConfig};

fn bench_compositor(c: &mut Criterion) {
    let mut rng = stream_rng(7, 0);
    let comp = Compositor::<f32>::init(&mut rng, CompositorConfig::default()).expect("init");
    let channels: Array2<f32> = model_channels(&record());
    c.bench_function("compositor_forward_2400", |b| {
        b.iter(|| comp.forward(&channels).expect("forward"))
    });
}

fn bench_attention(c: &mut Criterion) {
    let (hidden, t_len) = (64, 75);
    let att = SqAttention::<f32>::init(
        11,
        AttentionConfig {
            hidden,
            t_len,
            pooling: ContextPooling::Mean,
        },
    )
    .expect("init");
    let mut rng = stream_rng(11, 1);
    let states = Array2::from_shape_fn((hidden, t_len), |_| rng.gen_range(-1.0f32..1.0));
    let sqi = uniform_sqi(t_len);
    c.bench_function("sq_attention_forward_64x75", |b| {
        b.iter(|| att.forward(&states, &sqi.values).expect("forward"))
    });
}

fn bench_full_model(c: &mut Criterion) {
    let base = ModelConfig::default();
    let model = build_variant::<f32>(3, VariantConfig::of(Variant::Squwa), &base).expect("build");
    let rec = record();
    let sqi = uniform_sqi(base.t_len());

    c.bench_function("squwa_forward_2400", |b| {
        b.iter(|| model.forward(&rec, Some(&sqi)).expect("forward"))
    });

    let (_, cache) = model.forward(&rec, Some(&sqi)).expect("forward");
    c.bench_function("squwa_backward_2400", |b| {
        b.iter(|| model.backward(&cache, 0.25f32))
    });
}

fn bench_quality_model(c: &mut Criterion) {
    let sq = SqModel::<f32>::init(5, SqConfig::default()).expect("init");
    let rec = record();
    c.bench_function("sq_cam_sqi_2400", |b| b.iter(|| sq.sqi(&rec).expect("sqi")));
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(20);
    targets = bench_compositor, bench_attention, bench_full_model, bench_quality_model
}
criterion_main!(pipeline);
