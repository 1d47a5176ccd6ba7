//! `squwa` — command-line entry points for the full pipeline: corpus
//! synthesis, quality-model and classifier training, ablation sweeps,
//! evaluation, and attention visualization.
//!
//! Every command is deterministic for a given `--seed` (or the `SQUWA_SEED`
//! environment variable); reruns produce byte-identical report files.
//! Failures print a machine-readable JSON object on stderr and exit nonzero
//! (2 for I/O problems such as missing files, 1 otherwise).

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use squwa_core::corpus::{generate_corpus, read_corpus, write_corpus, Corpus, Split};
use squwa_core::eval::{
    attention_report, metrics, quality_stratified_aucpr, write_attention_report,
    write_stratified_csv,
};
use squwa_core::losses::LossKind;
use squwa_core::nn::stream_rng;
use squwa_core::sqmodel::{train_sq, SqModel, SqTrainConfig};
use squwa_core::synth::SynthConfig;
use squwa_core::trainer::{
    build_variant, split_probabilities, train, ModelConfig, SqiCache, SquwaModel, TrainConfig,
    Variant, VariantConfig,
};
use squwa_core::types::{Rhythm, SqiSeries};
use squwa_core::{Result, SquwaError};

/// Shipped defaults for every config section (Appendix-A protocol values).
const DEFAULTS: &str = include_str!("../defaults.json");
const SCHEMA_VERSION: u64 = 1;
/// Seed stream for post-generation label flips.
const FLIP_STREAM: u64 = 0xF11B;

#[derive(Parser)]
#[command(
    name = "squwa",
    version,
    about = "Signal-quality-weighted AF detection from synthetic PPG"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a PPG corpus and write it with its manifest.
    GenData {
        /// JSON config file; see defaults.json for the schema.
        #[arg(long)]
        config: PathBuf,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed (and SQUWA_SEED).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the signal-quality classifier and print validation accuracy.
    TrainSq {
        /// Corpus directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON config with an `sq_train` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one architecture variant against a frozen quality model.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Quality-model checkpoint from train-sq.
        #[arg(long)]
        sq: PathBuf,
        /// SQUWA, NKS, NKM, NKL, NSC, NFE, NRN, NSQ or RSQ.
        #[arg(long, default_value = "SQUWA")]
        variant: String,
        /// bce, sce, gce or jol; overrides the config's loss.
        #[arg(long)]
        loss: Option<String>,
        /// Output checkpoint path (a .report.json lands next to it).
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON config with `train` / `model` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train all nine variants and emit a comparison table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sq: PathBuf,
        /// Output directory for per-variant checkpoints and the table.
        #[arg(long)]
        out: PathBuf,
        /// bce, sce, gce or jol; overrides the config's loss.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained model: headline metrics plus the
    /// quality-stratified AUCPR curve.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Quality-model checkpoint (stratification axis and, for
        /// quality-aware variants, the model input).
        #[arg(long)]
        sq: PathBuf,
        /// Report directory (metrics.json, stratified.csv).
        #[arg(long)]
        report: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump a per-record attention report for a quality-attentive model.
    Viz {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Quality-model checkpoint; required unless the model takes
        /// random quality input.
        #[arg(long)]
        sq: Option<PathBuf>,
        /// Record id, e.g. p0012-r2.
        #[arg(long)]
        record: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let payload = json!({ "kind": e.kind(), "message": e.to_string() });
        eprintln!("{payload}");
        std::process::exit(if e.kind() == "IOError" { 2 } else { 1 });
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out, seed } => gen_data(&config, &out, seed),
        Cmd::TrainSq {
            data,
            out,
            config,
            seed,
        } => train_sq_cmd(&data, &out, config.as_deref(), seed),
        Cmd::Train {
            data,
            sq,
            variant,
            loss,
            out,
            config,
            seed,
        } => train_cmd(
            &data,
            &sq,
            &variant,
            loss.as_deref(),
            &out,
            config.as_deref(),
            seed,
        ),
        Cmd::Ablate {
            data,
            sq,
            out,
            loss,
            config,
            seed,
        } => ablate_cmd(&data, &sq, &out, loss.as_deref(), config.as_deref(), seed),
        Cmd::Eval {
            model,
            data,
            sq,
            report,
            split,
            seed,
        } => eval_cmd(&model, &data, &sq, &report, &split, seed),
        Cmd::Viz {
            model,
            data,
            sq,
            record,
            out,
            seed,
        } => viz_cmd(&model, &data, sq.as_deref(), &record, &out, seed),
    }
}

/// Versioned JSON config; any section may be omitted and falls back to the
/// library default (spelled out in the shipped defaults.json).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema_version: u64,
    #[serde(default)]
    synth: Option<SynthConfig>,
    /// Fraction of train-split labels to flip after generation.
    #[serde(default)]
    label_flip_rate: Option<f64>,
    #[serde(default)]
    sq_train: Option<SqTrainConfig>,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    model: Option<ModelConfig>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let text = match path {
        Some(p) => fs::read_to_string(p)?,
        None => DEFAULTS.to_string(),
    };
    let cfg: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| SquwaError::config(format!("bad config JSON: {e}")))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(SquwaError::version(format!(
            "config schema_version {} unsupported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

/// `--seed` wins over `SQUWA_SEED`; `None` means "use the config's seed".
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SQUWA_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| SquwaError::config(format!("SQUWA_SEED is not a u64: {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn print_pretty(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn nonempty(corpus: &Corpus) -> Result<()> {
    if corpus.is_empty() {
        return Err(SquwaError::degenerate("corpus has no records"));
    }
    Ok(())
}

fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(Some(config))?;
    let mut synth = cfg.synth.unwrap_or_default();
    if let Some(s) = resolve_seed(seed)? {
        synth.seed = s;
    }
    let mut corpus = generate_corpus(&synth)?;
    let rate = cfg.label_flip_rate.unwrap_or(0.0);
    if rate > 0.0 {
        let mut rng = stream_rng(synth.seed, FLIP_STREAM);
        corpus.flip_train_labels(rate, &mut rng)?;
    }
    let manifest = write_corpus(&corpus, out)?;
    print_pretty(&json!({
        "records": corpus.len(),
        "record_len": manifest.record_len,
        "counts": manifest.counts,
        "flipped": manifest.flipped_records.len(),
        "out": out,
    }));
    Ok(())
}

fn train_sq_cmd(data: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let corpus = read_corpus(data)?;
    let mut cfg = load_config(config)?.sq_train.unwrap_or_default();
    if let Some(s) = resolve_seed(seed)? {
        cfg.seed = s;
    }
    let (model, report) = train_sq(&corpus, &cfg)?;
    model.save(out, Some(report.val_accuracy))?;
    print_pretty(&json!({
        "val_accuracy": report.val_accuracy,
        "train_loss": report.train_loss,
        "epochs": report.epochs,
        "n_train": report.n_train,
        "n_val": report.n_val,
        "warning": report.warning,
        "checkpoint": out,
    }));
    Ok(())
}

/// Model/train settings shared by `train` and `ablate`: config sections with
/// the record length taken from the data and seed/loss flag overrides.
fn training_setup(
    corpus: &Corpus,
    config: Option<&Path>,
    loss: Option<&str>,
    seed: Option<u64>,
) -> Result<(ModelConfig, TrainConfig)> {
    nonempty(corpus)?;
    let cfg_file = load_config(config)?;
    let mut base = cfg_file.model.unwrap_or_default();
    base.record_len = corpus.records[0].samples.len();
    let mut tc = cfg_file.train.unwrap_or_default();
    if let Some(s) = resolve_seed(seed)? {
        tc.seed = s;
    }
    if let Some(l) = loss {
        tc.loss = LossKind::from_str(l)?;
    }
    Ok((base, tc))
}

fn train_cmd(
    data: &Path,
    sq_path: &Path,
    variant: &str,
    loss: Option<&str>,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let variant = Variant::from_str(variant)?;
    let vc = VariantConfig::of(variant);
    let corpus = read_corpus(data)?;
    let (base, tc) = training_setup(&corpus, config, loss, seed)?;
    let sq = SqModel::<f32>::load(sq_path)?;
    let sqis = SqiCache::for_variant(&vc, Some(&sq), &corpus, base.t_len(), tc.seed)?;
    let model = build_variant::<f32>(tc.seed, vc, &base)?;
    let (trained, report) = train(model, &corpus, &sqis, &tc)?;
    trained.save(out)?;
    let report_path = out.with_extension("report.json");
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("serializable") + "\n",
    )?;
    let last = report.history.last().expect("at least one epoch");
    print_pretty(&json!({
        "variant": variant.name(),
        "loss": tc.loss.name(),
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "val_auroc": last.val_auroc,
        "stopped_early": report.stopped_early,
        "checkpoint": out,
        "report": report_path,
    }));
    Ok(())
}

fn ablate_cmd(
    data: &Path,
    sq_path: &Path,
    out: &Path,
    loss: Option<&str>,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let corpus = read_corpus(data)?;
    let (base, tc) = training_setup(&corpus, config, loss, seed)?;
    let sq = SqModel::<f32>::load(sq_path)?;
    let test = corpus.indices(Split::Test);
    fs::create_dir_all(out)?;

    let mut rows = Vec::new();
    for &variant in Variant::ALL.iter() {
        let vc = VariantConfig::of(variant);
        let sqis = SqiCache::for_variant(&vc, Some(&sq), &corpus, base.t_len(), tc.seed)?;
        let model = build_variant::<f32>(tc.seed, vc, &base)?;
        let (trained, report) = train(model, &corpus, &sqis, &tc)?;
        let probs = split_probabilities(&trained, &corpus, &sqis, &test)?;
        let labels: Vec<Rhythm> = test.iter().map(|&i| corpus.records[i].label).collect();
        let m = metrics(&probs, &labels)?;
        trained.save(&out.join(format!("{}.ckpt", variant.name().to_lowercase())))?;
        rows.push((variant, report, m));
    }

    let mut csv = String::from(
        "variant,loss,epochs_run,best_epoch,best_val_loss,val_auroc,test_auroc,test_f1,test_aucpr\n",
    );
    let mut table = Vec::new();
    for (variant, report, m) in &rows {
        let val_auroc = report.history[report.best_epoch - 1].val_auroc;
        csv.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            variant.name(),
            report.loss.name(),
            report.epochs_run,
            report.best_epoch,
            report.best_val_loss,
            val_auroc,
            m.auroc,
            m.f1,
            m.aucpr
        ));
        table.push(json!({
            "variant": variant.name(),
            "report": report,
            "test_metrics": m,
        }));
    }
    fs::write(out.join("ablation.csv"), csv)?;
    fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&table).expect("serializable") + "\n",
    )?;
    print_pretty(&json!({
        "variants": rows.len(),
        "test_records": test.len(),
        "table": out.join("ablation.csv"),
        "out": out,
    }));
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(SquwaError::config(format!(
            "unknown split '{other}' (expected train, val or test)"
        ))),
    }
}

/// Share of SQI timesteps below 0.5: the per-record bad-quality measure
/// behind the stratified curve's x-axis.
fn bad_fraction(sqi: &SqiSeries) -> f64 {
    let below = sqi.values.iter().filter(|&&v| v < 0.5).count();
    below as f64 / sqi.values.len() as f64
}

fn eval_cmd(
    model_path: &Path,
    data: &Path,
    sq_path: &Path,
    report_dir: &Path,
    split: &str,
    seed: Option<u64>,
) -> Result<()> {
    let model = SquwaModel::<f32>::load(model_path)?;
    let corpus = read_corpus(data)?;
    nonempty(&corpus)?;
    let sq = SqModel::<f32>::load(sq_path)?;
    let split = parse_split(split)?;
    let idx = corpus.indices(split);
    if idx.is_empty() {
        return Err(SquwaError::degenerate(format!("{split} split is empty")));
    }
    let record_len = corpus.records[0].samples.len();
    if model.config.record_len != record_len {
        return Err(SquwaError::config(format!(
            "model expects {}-sample records but the corpus has {record_len}",
            model.config.record_len
        )));
    }

    let seed = resolve_seed(seed)?.unwrap_or(0);
    let input_sqis = SqiCache::for_variant(
        &model.variant,
        Some(&sq),
        &corpus,
        model.config.t_len(),
        seed,
    )?;
    let probs = split_probabilities(&model, &corpus, &input_sqis, &idx)?;
    let labels: Vec<Rhythm> = idx.iter().map(|&i| corpus.records[i].label).collect();
    let m = metrics(&probs, &labels)?;

    // The stratification axis always comes from the quality model, whatever
    // quality input the variant itself consumes.
    let bad: Vec<f64> = idx
        .iter()
        .map(|&i| sq.sqi(&corpus.records[i]).map(|s| bad_fraction(&s)))
        .collect::<Result<_>>()?;
    let thresholds: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let curve = quality_stratified_aucpr(&probs, &labels, &bad, &thresholds)?;

    fs::create_dir_all(report_dir)?;
    let summary = json!({
        "variant": model.variant.variant.name(),
        "split": split.dir_name(),
        "n_records": idx.len(),
        "auroc": m.auroc,
        "f1": m.f1,
        "aucpr": m.aucpr,
    });
    fs::write(
        report_dir.join("metrics.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    write_stratified_csv(&curve, &report_dir.join("stratified.csv"))?;
    print_pretty(&summary);
    Ok(())
}

fn viz_cmd(
    model_path: &Path,
    data: &Path,
    sq_path: Option<&Path>,
    record_id: &str,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let model = SquwaModel::<f32>::load(model_path)?;
    let corpus = read_corpus(data)?;
    let i = corpus
        .records
        .iter()
        .position(|r| r.record_id == record_id)
        .ok_or_else(|| SquwaError::value(format!("record '{record_id}' not in corpus")))?;

    let seed = resolve_seed(seed)?.unwrap_or(0);
    let sq = match sq_path {
        Some(p) => Some(SqModel::<f32>::load(p)?),
        None => None,
    };
    let sqis = SqiCache::for_variant(
        &model.variant,
        sq.as_ref(),
        &corpus,
        model.config.t_len(),
        seed,
    )?;
    let sqi = sqis.get(i).ok_or_else(|| {
        SquwaError::config("this variant takes no quality input; nothing to visualize")
    })?;
    let (_, cache) = model.forward(&corpus.records[i], Some(sqi))?;
    let artifacts = model
        .artifacts(&cache)
        .ok_or_else(|| SquwaError::config("this variant has no attention map"))?;
    let composite = cache.composite.as_slice().expect("standard layout");
    let report = attention_report(&corpus.records[i], composite, &artifacts, sqi);
    write_attention_report(&report, out)?;
    print_pretty(&json!({
        "record": report.record_id,
        "probability": report.probability,
        "masked_mean_column_mass": report.masked_mean_column_mass,
        "unmasked_mean_column_mass": report.unmasked_mean_column_mass,
        "out": out,
    }));
    Ok(())
}
