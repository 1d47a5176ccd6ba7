//! End-to-end check that label re-estimation repairs recorded label flips.

use squwa_core::corpus::{generate_corpus, Split};
use squwa_core::losses::LossKind;
use squwa_core::nn::stream_rng;
use squwa_core::synth::SynthConfig;
use squwa_core::trainer::{
    build_variant, train, ModelConfig, SqiCache, TrainConfig, Variant, VariantConfig,
};
use squwa_core::types::Rhythm;

/// With a quarter of the training labels flipped, the soft-label loss should
/// pull most of the flipped records back across the decision midpoint within
/// its 20-epoch window: the clean majority anchors what the network
/// generalizes, and the per-epoch moving average lets improving predictions
/// overwrite the bad labels. The momentum must be gentle — an aggressive
/// setting copies near-0.5 first-epoch predictions over every label before
/// the network has learned anything, and correction never starts.
#[test]
fn soft_labels_recover_flipped_training_labels() {
    let synth = SynthConfig {
        n_records: 800,
        duration_s: 15.0,
        corruption_fraction_range: (0.0, 0.1),
        seed: 31,
        ..SynthConfig::default()
    };
    let mut corpus = generate_corpus(&synth).unwrap();
    let mut rng = stream_rng(32, 0);
    let flipped = corpus.flip_train_labels(0.25, &mut rng).unwrap();
    assert!(!flipped.is_empty());

    let mut base = ModelConfig::mini();
    base.record_len = corpus.records[0].samples.len();
    let vc = VariantConfig::of(Variant::Nsq);
    let sqis = SqiCache::for_variant(&vc, None, &corpus, base.t_len(), 33).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        lr: 1e-3,
        max_epochs: 20,
        patience: 20,
        loss: LossKind::Jol {
            momentum: 0.3,
            lambda_prior: 0.1,
            lambda_entropy: 0.1,
        },
        seed: 33,
        ..TrainConfig::default()
    };
    let model = build_variant::<f32>(33, vc, &base).unwrap();
    let (_, report) = train(model, &corpus, &sqis, &cfg).unwrap();
    let soft = report
        .jol_soft_labels
        .expect("soft labels accompany the soft-label loss");

    let train_idx = corpus.indices(Split::Train);
    assert_eq!(soft.len(), train_idx.len());
    let mut crossed = 0usize;
    for &i in &flipped {
        let j = train_idx.binary_search(&i).expect("flips are train-only");
        // The stored label is the corrupted one; the truth is its opposite.
        let toward_true = match corpus.records[i].label {
            Rhythm::Af => soft[j] < 0.5,
            Rhythm::NonAf => soft[j] > 0.5,
        };
        if toward_true {
            crossed += 1;
        }
    }
    assert!(
        crossed * 10 >= flipped.len() * 6,
        "only {crossed}/{} soft labels crossed toward the true label",
        flipped.len()
    );
}
