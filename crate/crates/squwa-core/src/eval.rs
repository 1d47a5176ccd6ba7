//! Metrics and analysis reports: AUROC/F1/AUCPR, quality-stratified AUCPR
//! curves, and per-record attention reports with file dumps.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Result, SquwaError};
use crate::types::{AttentionArtifacts, PpgRecord, Rhythm, SqiSeries};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metrics {
    pub auroc: f64,
    pub f1: f64,
    pub aucpr: f64,
}

/// All three headline metrics; errors if either class is absent.
pub fn metrics(probs: &[f32], labels: &[Rhythm]) -> Result<Metrics> {
    Ok(Metrics {
        auroc: auroc(probs, labels)?,
        f1: f1_at_half(probs, labels)?,
        aucpr: aucpr(probs, labels)?,
    })
}

fn class_counts(labels: &[Rhythm]) -> Result<(usize, usize)> {
    let n_pos = labels.iter().filter(|l| **l == Rhythm::Af).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SquwaError::degenerate(format!(
            "need both classes, got {n_pos} positive / {n_neg} negative"
        )));
    }
    Ok((n_pos, n_neg))
}

/// AUROC via the Mann-Whitney rank statistic with midranks for ties.
pub fn auroc(scores: &[f32], labels: &[Rhythm]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SquwaError::shape("scores/labels length mismatch"));
    }
    let (n_pos, n_neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Midranks: equal scores share the average of their 1-based rank range.
    let n = scores.len();
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == Rhythm::Af {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }

    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Brute-force AUROC: concordance probability over all positive-negative
/// pairs, ties counted half. Quadratic; used as an oracle for [`auroc`].
pub fn auroc_pairwise(scores: &[f32], labels: &[Rhythm]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(labels)?;
    let mut conc = 0.0f64;
    for (i, &li) in labels.iter().enumerate() {
        if li != Rhythm::Af {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == Rhythm::Af {
                continue;
            }
            if scores[i] > scores[j] {
                conc += 1.0;
            } else if scores[i] == scores[j] {
                conc += 0.5;
            }
        }
    }
    Ok(conc / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve by step integration over descending
/// score groups (ties move as one block).
pub fn aucpr(scores: &[f32], labels: &[Rhythm]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SquwaError::shape("scores/labels length mismatch"));
    }
    let (n_pos, _) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0f64;
    let mut area = 0.0f64;
    let n = scores.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == Rhythm::Af {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// F1 score thresholding probabilities at 0.5 (p >= 0.5 predicts AF).
pub fn f1_at_half(probs: &[f32], labels: &[Rhythm]) -> Result<f64> {
    class_counts(labels)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in probs.iter().zip(labels.iter()) {
        let pred_af = p >= 0.5;
        match (pred_af, l == Rhythm::Af) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StratifiedPoint {
    pub threshold: f64,
    pub n_records: usize,
    /// `None` when the retained subset lacks one of the classes.
    pub aucpr: Option<f64>,
}

/// AUCPR over the sub-population of records whose bad-quality fraction is at
/// most each threshold (cumulative bins).
pub fn quality_stratified_aucpr(
    probs: &[f32],
    labels: &[Rhythm],
    bad_fractions: &[f64],
    thresholds: &[f64],
) -> Result<Vec<StratifiedPoint>> {
    if probs.len() != labels.len() || probs.len() != bad_fractions.len() {
        return Err(SquwaError::shape(
            "probs/labels/bad_fractions length mismatch",
        ));
    }
    let mut curve = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        let idx: Vec<usize> = (0..probs.len())
            .filter(|&i| bad_fractions[i] <= tau)
            .collect();
        let sub_probs: Vec<f32> = idx.iter().map(|&i| probs[i]).collect();
        let sub_labels: Vec<Rhythm> = idx.iter().map(|&i| labels[i]).collect();
        let aucpr = aucpr(&sub_probs, &sub_labels).ok();
        curve.push(StratifiedPoint {
            threshold: tau,
            n_records: idx.len(),
            aucpr,
        });
    }
    Ok(curve)
}

/// Write a stratified curve as CSV: `threshold,n_records,aucpr`.
pub fn write_stratified_csv(curve: &[StratifiedPoint], path: &Path) -> Result<()> {
    let mut out = String::from("threshold,n_records,aucpr\n");
    for p in curve {
        let v = p.aucpr.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!("{:.4},{},{}\n", p.threshold, p.n_records, v));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Fig.-6-style per-record interpretation bundle.
#[derive(Debug, Clone)]
pub struct AttentionReport {
    pub record_id: String,
    pub raw: Vec<f32>,
    pub composite: Vec<f32>,
    pub sqi: Vec<f32>,
    /// Per-feature-step fraction of masked samples, if the record has a mask.
    pub mask_fraction_per_step: Option<Vec<f32>>,
    /// Row-stochastic attention weights, `T x T`.
    pub attention: Array2<f32>,
    pub logit: f32,
    pub probability: f32,
    /// Mean column attention mass over steps that are mostly masked.
    pub masked_mean_column_mass: Option<f64>,
    /// Same over steps that are mostly clean.
    pub unmasked_mean_column_mass: Option<f64>,
}

/// Build the report. A feature step counts as masked when more than half of
/// the raw samples it covers are masked.
pub fn attention_report(
    record: &PpgRecord,
    composite: &[f32],
    artifacts: &AttentionArtifacts,
    sqi: &SqiSeries,
) -> AttentionReport {
    let t_steps = artifacts.weights.dim().0;
    let mask_fraction_per_step = record.quality_mask.as_ref().map(|mask| {
        let per = mask.len() / t_steps;
        (0..t_steps)
            .map(|t| {
                let span = &mask[t * per..(t + 1) * per];
                span.iter().map(|&m| m as f32).sum::<f32>() / per as f32
            })
            .collect::<Vec<f32>>()
    });

    let col_mass = artifacts.column_mass();
    let (mut masked_sum, mut masked_n) = (0.0f64, 0usize);
    let (mut clean_sum, mut clean_n) = (0.0f64, 0usize);
    if let Some(fracs) = &mask_fraction_per_step {
        for (t, &f) in fracs.iter().enumerate() {
            if f > 0.5 {
                masked_sum += col_mass[t] as f64;
                masked_n += 1;
            } else {
                clean_sum += col_mass[t] as f64;
                clean_n += 1;
            }
        }
    }

    AttentionReport {
        record_id: record.record_id.clone(),
        raw: record.samples.clone(),
        composite: composite.to_vec(),
        sqi: sqi.values.to_vec(),
        mask_fraction_per_step,
        attention: artifacts.weights.clone(),
        logit: artifacts.logit,
        probability: artifacts.probability,
        masked_mean_column_mass: (masked_n > 0).then(|| masked_sum / masked_n as f64),
        unmasked_mean_column_mass: (clean_n > 0).then(|| clean_sum / clean_n as f64),
    }
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    record_id: &'a str,
    logit: f32,
    probability: f32,
    masked_mean_column_mass: Option<f64>,
    unmasked_mean_column_mass: Option<f64>,
}

/// Emit the report as data files under `dir`:
/// `record.csv` (sample traces), `sqi.csv` (per-step SQI and mask overlap),
/// `attention.bin` (named-block matrix dump), `summary.json`.
pub fn write_attention_report(report: &AttentionReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut rec = fs::File::create(dir.join("record.csv"))?;
    writeln!(rec, "sample,raw,composite")?;
    for (i, (&r, &c)) in report.raw.iter().zip(report.composite.iter()).enumerate() {
        writeln!(rec, "{i},{r},{c}")?;
    }

    let mut sq = fs::File::create(dir.join("sqi.csv"))?;
    writeln!(sq, "step,sqi,mask_fraction")?;
    for (t, &v) in report.sqi.iter().enumerate() {
        let mf = report
            .mask_fraction_per_step
            .as_ref()
            .map(|m| format!("{}", m[t]))
            .unwrap_or_default();
        writeln!(sq, "{t},{v},{mf}")?;
    }

    let t = report.attention.dim().0;
    crate::trainer::checkpoint::write_named_blocks(
        &dir.join("attention.bin"),
        &serde_json::json!({"kind": "attention", "record_id": report.record_id}),
        &[(
            "attention".to_string(),
            vec![t, t],
            report.attention.as_slice().expect("standard layout"),
        )],
    )?;

    let summary = ReportSummary {
        record_id: &report.record_id,
        logit: report.logit,
        probability: report.probability,
        masked_mean_column_mass: report.masked_mean_column_mass,
        unmasked_mean_column_mass: report.unmasked_mean_column_mass,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    Ok(())
}
