//! Variant factory, training loop, and checkpoint plumbing.
//!
//! Training is fully deterministic for a given seed: batch order comes from
//! a per-epoch stream of the seed, per-record gradients are computed in
//! parallel but reduced in index order, and the quality branch is frozen —
//! its SQI series are computed once up front and treated as inputs.

pub mod checkpoint;
pub mod model;
pub mod variants;

pub use model::{
    build_variant, model_channels, Classifier, FeatureStage, ModelCache, ModelConfig, SquwaModel,
};
pub use variants::{BlockFlags, SqiSource, Variant, VariantConfig};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::corpus::{Corpus, Split};
use crate::error::{Result, SquwaError};
use crate::eval::{metrics, Metrics};
use crate::losses::{point_loss_and_grad, JolState, LossKind};
use crate::nn::{stream_rng, Adam, ParamTensors};
use crate::sqmodel::SqModel;
use crate::types::SqiSeries;
use ndarray::Array1;

/// Per-record SQI series for a whole corpus, computed once so the quality
/// branch stays frozen during training.
#[derive(Debug, Clone)]
pub struct SqiCache {
    series: Vec<Option<SqiSeries>>,
}

impl SqiCache {
    /// CAM-derived SQI from a trained quality model, for every record.
    pub fn from_model(sq: &SqModel<f32>, corpus: &Corpus) -> Result<Self> {
        let series: Vec<Option<SqiSeries>> = corpus
            .records
            .par_iter()
            .map(|r| sq.sqi(r).map(Some))
            .collect::<Result<_>>()?;
        Ok(Self { series })
    }

    /// Uniform(0,1) noise per timestep, drawn once per record.
    pub fn random(corpus: &Corpus, t_len: usize, seed: u64) -> Self {
        let series = (0..corpus.len())
            .map(|i| {
                let mut rng = stream_rng(seed, 0x5152 + i as u64);
                let values = Array1::from_shape_fn(t_len, |_| rng.gen_range(0.0f32..=1.0));
                Some(SqiSeries::new(values).expect("uniform draws lie in [0,1]"))
            })
            .collect();
        Self { series }
    }

    /// No quality input (mean-pooled variants).
    pub fn none(corpus: &Corpus) -> Self {
        Self {
            series: vec![None; corpus.len()],
        }
    }

    /// The source a variant's configuration calls for.
    pub fn for_variant(
        vc: &VariantConfig,
        sq: Option<&SqModel<f32>>,
        corpus: &Corpus,
        t_len: usize,
        seed: u64,
    ) -> Result<Self> {
        if !vc.flags.sq_attention && vc.variant != Variant::Nrn {
            return Ok(Self::none(corpus));
        }
        match vc.sqi_source {
            SqiSource::Random => Ok(Self::random(corpus, t_len, seed)),
            SqiSource::Model => {
                let sq = sq.ok_or_else(|| {
                    SquwaError::config("this variant needs a trained quality model")
                })?;
                Self::from_model(sq, corpus)
            }
        }
    }

    pub fn get(&self, index: usize) -> Option<&SqiSeries> {
        self.series[index].as_ref()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

/// Optimization protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied per epoch.
    pub lr_decay: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Optional early exit: stop once validation AUROC reaches this level.
    pub target_val_auroc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 1e-4,
            lr_decay: 0.97,
            patience: 10,
            max_epochs: 30,
            seed: 0,
            loss: LossKind::Bce,
            target_val_auroc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SquwaError::config("batch_size must be positive"));
        }
        if self.patience == 0 {
            return Err(SquwaError::config("patience must be at least 1"));
        }
        // lr = 0 is legal (a no-op optimizer is still well defined); only a
        // negative rate is rejected.
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(SquwaError::config("lr must be a finite nonnegative number"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(SquwaError::config("lr_decay must lie in (0, 1]"));
        }
        if self.max_epochs == 0 {
            return Err(SquwaError::config("max_epochs must be at least 1"));
        }
        self.loss.validate()
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: f64,
    pub val_aucpr: f64,
    pub val_f1: f64,
}

/// Outcome of a training run; the returned model is the best-validation-loss
/// checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub loss: LossKind,
    pub epochs_run: usize,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub reached_target: bool,
    pub history: Vec<EpochRecord>,
    /// Final re-estimated soft labels when training with the soft-label loss,
    /// aligned with the sorted train-split record indices.
    #[serde(default)]
    pub jol_soft_labels: Option<Vec<f64>>,
}

/// The loss used for validation monitoring: the training objective for
/// pointwise losses, plain cross-entropy when training with re-estimated
/// soft labels (which only exist for the train split).
fn monitor_loss(kind: &LossKind) -> LossKind {
    match kind {
        LossKind::Jol { .. } => LossKind::Bce,
        other => *other,
    }
}

/// Inside the optimization loop a non-finite intermediate (saturated
/// attention scores, overflowed activations) means the run has diverged;
/// report it as such instead of as a low-level numeric failure.
fn escalate(e: SquwaError, epoch: usize) -> SquwaError {
    match e {
        SquwaError::Numerical(msg) => {
            SquwaError::divergence(format!("diverged at epoch {epoch}: {msg}"))
        }
        other => other,
    }
}

fn check_patient_disjoint(corpus: &Corpus) -> Result<()> {
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for meta in &corpus.meta {
        match seen.entry(meta.patient_id.as_str()) {
            std::collections::hash_map::Entry::Occupied(e) => {
                if *e.get() != meta.split {
                    return Err(SquwaError::config(format!(
                        "patient {} appears in both {} and {} splits",
                        meta.patient_id,
                        e.get(),
                        meta.split
                    )));
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(meta.split);
            }
        }
    }
    Ok(())
}

/// Probabilities for a set of records, in index order.
pub fn split_probabilities(
    model: &SquwaModel<f32>,
    corpus: &Corpus,
    sqis: &SqiCache,
    indices: &[usize],
) -> Result<Vec<f32>> {
    indices
        .par_iter()
        .map(|&i| {
            let (out, _) = model.forward(&corpus.records[i], sqis.get(i))?;
            Ok(out.probability)
        })
        .collect()
}

/// Mean monitoring loss and standard metrics over a set of records.
fn evaluate(
    model: &SquwaModel<f32>,
    corpus: &Corpus,
    sqis: &SqiCache,
    indices: &[usize],
    kind: &LossKind,
) -> Result<(f64, Metrics)> {
    let outs: Vec<(f64, f32)> = indices
        .par_iter()
        .map(|&i| {
            let (out, _) = model.forward(&corpus.records[i], sqis.get(i))?;
            let z = f64::from(out.logit);
            let (loss, _) = point_loss_and_grad(kind, z, corpus.records[i].label);
            Ok((loss, out.probability))
        })
        .collect::<Result<_>>()?;
    let loss = outs.iter().map(|(l, _)| l).sum::<f64>() / indices.len() as f64;
    let probs: Vec<f32> = outs.iter().map(|(_, p)| *p).collect();
    let labels: Vec<_> = indices.iter().map(|&i| corpus.records[i].label).collect();
    Ok((loss, metrics(&probs, &labels)?))
}

/// Train a model on the corpus's train split, monitoring the validation
/// split. Returns the best-validation-loss model and the full history.
pub fn train(
    mut model: SquwaModel<f32>,
    corpus: &Corpus,
    sqis: &SqiCache,
    cfg: &TrainConfig,
) -> Result<(SquwaModel<f32>, TrainReport)> {
    cfg.validate()?;
    check_patient_disjoint(corpus)?;
    if sqis.len() != corpus.len() {
        return Err(SquwaError::config(format!(
            "SQI cache covers {} records, corpus has {}",
            sqis.len(),
            corpus.len()
        )));
    }
    let train_idx = corpus.indices(Split::Train);
    let val_idx = corpus.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(SquwaError::config(
            "training needs non-empty train and val splits",
        ));
    }
    if model.needs_sqi() {
        if let Some(&i) = train_idx
            .iter()
            .chain(&val_idx)
            .find(|&&i| sqis.get(i).is_none())
        {
            return Err(SquwaError::config(format!(
                "record {i} has no SQI series but the variant requires one"
            )));
        }
    }

    let mut jol: Option<JolState> = match &cfg.loss {
        LossKind::Jol { .. } => {
            let labels: Vec<_> = train_idx.iter().map(|&i| corpus.records[i].label).collect();
            Some(JolState::new(&labels, &cfg.loss)?)
        }
        _ => None,
    };
    let monitor = monitor_loss(&cfg.loss);

    let mut adam = Adam::new(&model);
    let mut order = train_idx.clone();
    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_state = model.clone();
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;
    let mut reached_target = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        let mut rng = stream_rng(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);

        // The random-SQI variant gets fresh noise every epoch: with a fixed
        // per-record draw the weights can absorb the pattern, and the variant
        // stops measuring what random quality input costs. Validation and
        // final evaluation keep the caller's fixed cache.
        let resampled = (model.variant.variant == Variant::Rsq).then(|| {
            SqiCache::random(
                corpus,
                model.config.t_len(),
                cfg.seed.wrapping_add(epoch as u64),
            )
        });
        let train_sqis = resampled.as_ref().unwrap_or(sqis);

        let mut epoch_loss = 0.0;
        let mut epoch_preds: Vec<(usize, f64)> = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let inv_n = 1.0 / batch.len() as f64;
            let mut grads = model.zeros_like();
            let batch_loss = match &jol {
                None => {
                    // Pointwise losses: fused forward/backward per record.
                    let parts: Vec<(f64, SquwaModel<f32>)> = batch
                        .par_iter()
                        .map(|&i| {
                            let record = &corpus.records[i];
                            let (out, cache) = model.forward(record, train_sqis.get(i))?;
                            let (loss, dz) =
                                point_loss_and_grad(&cfg.loss, f64::from(out.logit), record.label);
                            Ok((loss, model.backward(&cache, dz as f32)))
                        })
                        .collect::<Result<_>>()
                        .map_err(|e| escalate(e, epoch))?;
                    let mut total = 0.0;
                    for (loss, g) in &parts {
                        total += loss;
                        grads.add_scaled(g, inv_n as f32);
                    }
                    total * inv_n
                }
                Some(state) => {
                    // Soft-label loss couples the batch through its mean
                    // prediction, so logits come first, gradients second.
                    let logits: Vec<f64> = batch
                        .par_iter()
                        .map(|&i| {
                            let (out, _) = model.forward(&corpus.records[i], train_sqis.get(i))?;
                            Ok(f64::from(out.logit))
                        })
                        .collect::<Result<_>>()
                        .map_err(|e| escalate(e, epoch))?;
                    let items: Vec<(usize, f64)> = batch
                        .iter()
                        .zip(&logits)
                        .map(|(&i, &z)| {
                            let j = train_idx.binary_search(&i).expect("train record");
                            (j, z)
                        })
                        .collect();
                    let (loss, dzs) = state.batch_loss_and_grads(&items);
                    for (&(j, z), _) in items.iter().zip(&dzs) {
                        epoch_preds.push((j, crate::losses::sigmoid64(z)));
                    }
                    let parts: Vec<SquwaModel<f32>> = batch
                        .par_iter()
                        .zip(&dzs)
                        .map(|(&i, &dz)| {
                            let (_, cache) =
                                model.forward(&corpus.records[i], train_sqis.get(i))?;
                            Ok(model.backward(&cache, dz as f32))
                        })
                        .collect::<Result<_>>()
                        .map_err(|e| escalate(e, epoch))?;
                    // The soft-label gradients already carry the 1/n factor.
                    for g in &parts {
                        grads.add_scaled(g, 1.0);
                    }
                    loss
                }
            };
            if !batch_loss.is_finite() {
                return Err(SquwaError::divergence(format!(
                    "training loss became non-finite at epoch {epoch}"
                )));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            adam.step(&mut model, &grads, lr);
        }
        let train_loss = epoch_loss / train_idx.len() as f64;

        if let Some(state) = &mut jol {
            state.update_soft_labels(&epoch_preds);
        }

        let (val_loss, val_metrics) =
            evaluate(&model, corpus, sqis, &val_idx, &monitor).map_err(|e| escalate(e, epoch))?;
        if !val_loss.is_finite() {
            return Err(SquwaError::divergence(format!(
                "validation loss became non-finite at epoch {epoch}"
            )));
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_auroc: val_metrics.auroc,
            val_aucpr: val_metrics.aucpr,
            val_f1: val_metrics.f1,
        });

        if val_loss < best_loss {
            best_loss = val_loss;
            best_state = model.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
        }

        if cfg.target_val_auroc.is_some_and(|t| val_metrics.auroc >= t) {
            reached_target = true;
            break;
        }
        if bad_epochs >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let report = TrainReport {
        variant: model.variant.variant,
        loss: cfg.loss,
        epochs_run: history.len(),
        best_epoch,
        best_val_loss: best_loss,
        stopped_early,
        reached_target,
        history,
        jol_soft_labels: jol.map(|state| state.soft),
    };
    Ok((best_state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::ContextPooling;
    use crate::compositor::CompositorConfig;
    use crate::fusion::FusionConfig;
    use crate::sqmodel::SqConfig;
    use crate::synth::SynthConfig;

    fn tiny_base() -> ModelConfig {
        ModelConfig {
            compositor: CompositorConfig {
                kernel_lengths: vec![9, 19, 39],
                kernels_per_bank: 2,
                subnet_filters: 2,
                subnet_kernel: 9,
                subnet_stride: 4,
                per_record_weights: true,
            },
            fusion: FusionConfig {
                widths: [4, 8, 8, 8],
                blocks: [1, 1, 1, 1],
                hidden: 8,
                ..FusionConfig::default()
            },
            pooling: ContextPooling::Mean,
            record_len: 320,
        }
    }

    fn tiny_corpus(seed: u64) -> Corpus {
        // 48 records = 6 patients per class -> 4 train / 1 val / 1 test each.
        let cfg = SynthConfig {
            n_records: 48,
            duration_s: 4.0,
            corruption_fraction_range: (0.0, 0.3),
            seed,
            ..SynthConfig::default()
        };
        crate::corpus::generate_corpus(&cfg).unwrap()
    }

    fn tiny_sq(seed: u64) -> SqModel<f32> {
        SqModel::init(
            seed,
            SqConfig {
                widths: [4, 4, 4, 4],
                blocks: [1, 1, 1, 1],
                ..SqConfig::default()
            },
        )
        .unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            lr: 1e-3,
            max_epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn random_sqi_is_seeded_and_in_range() {
        let corpus = tiny_corpus(1);
        let a = SqiCache::random(&corpus, 10, 7);
        let b = SqiCache::random(&corpus, 10, 7);
        let c = SqiCache::random(&corpus, 10, 8);
        for i in 0..corpus.len() {
            let va = &a.get(i).unwrap().values;
            assert_eq!(va.len(), 10);
            assert!(va.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(va, &b.get(i).unwrap().values);
        }
        assert_ne!(a.get(0).unwrap().values, c.get(0).unwrap().values);
        assert_ne!(a.get(0).unwrap().values, a.get(1).unwrap().values);
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let corpus = tiny_corpus(2);
        let base = tiny_base();
        let model = build_variant::<f32>(3, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::from_model(&tiny_sq(4), &corpus).unwrap();
        let before: Vec<Vec<u32>> = model
            .tensors()
            .iter()
            .map(|t| t.data.iter().map(|v| v.to_bits()).collect())
            .collect();

        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 3,
            ..quick_cfg()
        };
        let (trained, report) = train(model, &corpus, &sqis, &cfg).unwrap();
        assert_eq!(report.epochs_run, 3);
        for (t, bits) in trained.tensors().iter().zip(&before) {
            let now: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(&now, bits, "{} changed under lr=0", t.name);
        }
    }

    #[test]
    fn stops_after_best_plus_patience_epochs() {
        // lr = 0 keeps the validation loss constant, so the first epoch is
        // the lasting best and every later epoch counts against patience.
        let corpus = tiny_corpus(5);
        let base = tiny_base();
        let model = build_variant::<f32>(6, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::from_model(&tiny_sq(7), &corpus).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            patience: 10,
            max_epochs: 30,
            ..quick_cfg()
        };
        let (_, report) = train(model, &corpus, &sqis, &cfg).unwrap();
        assert_eq!(report.epochs_run, 11);
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn one_small_step_decreases_the_record_loss() {
        let corpus = tiny_corpus(8);
        let base = tiny_base();
        let model = build_variant::<f32>(9, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::from_model(&tiny_sq(10), &corpus).unwrap();
        let i = corpus.indices(Split::Train)[0];
        let record = &corpus.records[i];

        let loss_of = |m: &SquwaModel<f32>| {
            let (out, _) = m.forward(record, sqis.get(i)).unwrap();
            point_loss_and_grad(&LossKind::Bce, f64::from(out.logit), record.label).0
        };
        let mut model = model;
        let before = loss_of(&model);
        let (out, cache) = model.forward(record, sqis.get(i)).unwrap();
        let (_, dz) = point_loss_and_grad(&LossKind::Bce, f64::from(out.logit), record.label);
        let grads = model.backward(&cache, dz as f32);
        let mut adam = Adam::new(&model);
        adam.step(&mut model, &grads, 1e-6);
        let after = loss_of(&model);
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let corpus = tiny_corpus(11);
        let base = tiny_base();
        let sqis = SqiCache::from_model(&tiny_sq(12), &corpus).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            ..quick_cfg()
        };

        let run = || {
            let model = build_variant::<f32>(13, VariantConfig::of(Variant::Squwa), &base).unwrap();
            train(model, &corpus, &sqis, &cfg).unwrap().1
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(
            a.history.last().unwrap().val_loss.to_bits(),
            b.history.last().unwrap().val_loss.to_bits()
        );
    }

    #[test]
    fn exploding_rate_raises_divergence() {
        let corpus = tiny_corpus(14);
        let base = tiny_base();
        let model = build_variant::<f32>(15, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::from_model(&tiny_sq(16), &corpus).unwrap();
        let cfg = TrainConfig {
            lr: 1e8,
            max_epochs: 6,
            ..quick_cfg()
        };
        let err = train(model, &corpus, &sqis, &cfg).unwrap_err();
        assert_eq!(err.kind(), "DivergenceError");
    }

    #[test]
    fn quality_model_stays_frozen() {
        let corpus = tiny_corpus(17);
        let base = tiny_base();
        let sq = tiny_sq(18);
        let before: Vec<Vec<u32>> = sq
            .tensors()
            .iter()
            .map(|t| t.data.iter().map(|v| v.to_bits()).collect())
            .collect();
        let sqis = SqiCache::from_model(&sq, &corpus).unwrap();
        let model = build_variant::<f32>(19, VariantConfig::of(Variant::Squwa), &base).unwrap();
        train(model, &corpus, &sqis, &quick_cfg()).unwrap();
        for (t, bits) in sq.tensors().iter().zip(&before) {
            let now: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(&now, bits, "{} moved during training", t.name);
        }
    }

    #[test]
    fn every_variant_trains_one_epoch() {
        let corpus = tiny_corpus(20);
        let base = tiny_base();
        let sq = tiny_sq(21);
        let cfg = TrainConfig {
            max_epochs: 1,
            ..quick_cfg()
        };
        for variant in Variant::ALL {
            let vc = VariantConfig::of(variant);
            let model = build_variant::<f32>(22, vc, &base).unwrap();
            let sqis =
                SqiCache::for_variant(&vc, Some(&sq), &corpus, base.t_len(), cfg.seed).unwrap();
            let (_, report) = train(model, &corpus, &sqis, &cfg).unwrap();
            assert_eq!(report.epochs_run, 1, "{variant}");
            let row = &report.history[0];
            assert!(
                row.train_loss.is_finite() && row.val_loss.is_finite(),
                "{variant}"
            );
            assert!((0.0..=1.0).contains(&row.val_auroc), "{variant}");
        }
    }

    #[test]
    fn soft_label_training_runs_and_improves_nothing_weird() {
        let corpus = tiny_corpus(23);
        let base = tiny_base();
        let model = build_variant::<f32>(24, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::from_model(&tiny_sq(25), &corpus).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::jol_default(),
            max_epochs: 3,
            ..quick_cfg()
        };
        let (_, report) = train(model, &corpus, &sqis, &cfg).unwrap();
        assert_eq!(report.epochs_run, 3);
        assert!(report.history.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn soft_labels_reported_for_the_soft_label_loss_only() {
        let corpus = tiny_corpus(21);
        let base = tiny_base();
        let sqis = SqiCache::from_model(&tiny_sq(22), &corpus).unwrap();
        let run = |loss: LossKind| {
            let model = build_variant::<f32>(23, VariantConfig::of(Variant::Squwa), &base).unwrap();
            let cfg = TrainConfig {
                loss,
                ..quick_cfg()
            };
            train(model, &corpus, &sqis, &cfg).unwrap().1
        };
        assert!(run(LossKind::Bce).jol_soft_labels.is_none());
        let soft = run(LossKind::jol_default()).jol_soft_labels.unwrap();
        assert_eq!(soft.len(), corpus.indices(Split::Train).len());
        assert!(soft.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn missing_sqi_for_quality_variant_is_a_config_error() {
        let corpus = tiny_corpus(26);
        let base = tiny_base();
        let model = build_variant::<f32>(27, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::none(&corpus);
        let err = train(model, &corpus, &sqis, &quick_cfg()).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn mixed_split_patients_are_rejected() {
        let mut corpus = tiny_corpus(28);
        // Force one patient to straddle train and val.
        let train_patient = corpus.meta[corpus.indices(Split::Train)[0]]
            .patient_id
            .clone();
        let val_record = corpus.indices(Split::Val)[0];
        corpus.meta[val_record].patient_id = train_patient;
        let base = tiny_base();
        let model = build_variant::<f32>(29, VariantConfig::of(Variant::Squwa), &base).unwrap();
        let sqis = SqiCache::from_model(&tiny_sq(30), &corpus).unwrap();
        let err = train(model, &corpus, &sqis, &quick_cfg()).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn negative_lr_is_rejected() {
        let cfg = TrainConfig {
            lr: -1.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().kind(), "ConfigError");
        let cfg = TrainConfig {
            lr_decay: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().kind(), "ConfigError");
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().kind(), "ConfigError");
    }
}
