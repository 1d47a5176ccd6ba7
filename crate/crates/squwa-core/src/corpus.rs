//! Corpus containers and on-disk format.
//!
//! A corpus is generated patient-wise: each synthetic patient contributes a
//! handful of records and is assigned to exactly one split, so train/val/test
//! never share a patient. On disk, each split directory holds `records.bin`
//! (concatenated little-endian f32 sample arrays) and `meta.jsonl` (one JSON
//! object per record); `manifest.json` at the root echoes the generator
//! config, per-class counts, SHA-256 checksums, and the split assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SquwaError};
use crate::nn::stream_rng;
use crate::synth::{corrupt, synth_pulse_train, SynthConfig};
use crate::types::{PpgRecord, Rhythm};

pub const RECORDS_PER_PATIENT: usize = 4;
const SPLIT_FRACTIONS: (f64, f64) = (0.7, 0.15); // train, val; test gets the rest

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: String,
    pub patient_id: String,
    pub split: Split,
    /// Fraction of samples covered by the corruption mask.
    pub corruption_fraction: f64,
    /// True when the training label was flipped relative to the rhythm
    /// actually synthesized.
    pub flipped: bool,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<PpgRecord>,
    pub meta: Vec<RecordMeta>,
    pub config: SynthConfig,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.meta[i].split == split)
            .collect()
    }

    pub fn class_counts(&self, split: Split) -> (usize, usize) {
        let mut af = 0;
        let mut non_af = 0;
        for i in self.indices(split) {
            match self.records[i].label {
                Rhythm::Af => af += 1,
                Rhythm::NonAf => non_af += 1,
            }
        }
        (af, non_af)
    }

    /// Flip exactly `round(rate * n_train)` training labels; validation and
    /// test labels stay clean so evaluation remains meaningful. Returns the
    /// flipped corpus-level indices.
    pub fn flip_train_labels(
        &mut self,
        rate: f64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(SquwaError::value(format!(
                "flip rate {rate} outside [0, 1]"
            )));
        }
        let mut train = self.indices(Split::Train);
        let n_flips = (rate * train.len() as f64).round() as usize;
        train.shuffle(rng);
        let mut chosen: Vec<usize> = train.into_iter().take(n_flips).collect();
        chosen.sort_unstable();
        for &i in &chosen {
            self.records[i].label = self.records[i].label.flipped();
            self.meta[i].flipped = !self.meta[i].flipped;
        }
        Ok(chosen)
    }
}

/// Generate a full corpus: patients with a fixed rhythm, stratified
/// patient-wise split assignment, per-record corruption.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let n_patients = cfg.n_records.div_ceil(RECORDS_PER_PATIENT);
    let n_af_patients = (cfg.af_fraction * n_patients as f64).round() as usize;

    // Stratified split assignment so both classes appear in every split
    // whenever the class has enough patients.
    let mut split_of = vec![Split::Train; n_patients];
    let mut assign_rng = stream_rng(cfg.seed, u64::MAX);
    for class_af in [true, false] {
        let mut ids: Vec<usize> = (0..n_patients)
            .filter(|&p| (p < n_af_patients) == class_af)
            .collect();
        ids.shuffle(&mut assign_rng);
        let n = ids.len();
        let n_train = (SPLIT_FRACTIONS.0 * n as f64).round() as usize;
        let n_val = (SPLIT_FRACTIONS.1 * n as f64).round() as usize;
        for (rank, &p) in ids.iter().enumerate() {
            split_of[p] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    let mut records = Vec::with_capacity(cfg.n_records);
    let mut meta = Vec::with_capacity(cfg.n_records);
    for idx in 0..cfg.n_records {
        let patient = idx / RECORDS_PER_PATIENT;
        let rhythm = if patient < n_af_patients {
            Rhythm::Af
        } else {
            Rhythm::NonAf
        };
        let mut rng = stream_rng(cfg.seed, idx as u64);
        let clean = synth_pulse_train(rhythm, cfg, &mut rng)?;
        let (lo, hi) = cfg.corruption_fraction_range;
        let fraction = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let mut record = corrupt(&clean, fraction, &cfg.corruption_kind_weights, &mut rng)?;
        record.record_id = format!("r{idx:05}");
        let actual_fraction = record.corruption_fraction();
        records.push(record);
        meta.push(RecordMeta {
            record_id: format!("r{idx:05}"),
            patient_id: format!("p{patient:04}"),
            split: split_of[patient],
            corruption_fraction: actual_fraction,
            flipped: false,
        });
    }

    Ok(Corpus {
        records,
        meta,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCounts {
    pub af: usize,
    pub non_af: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u64,
    pub config: SynthConfig,
    pub record_len: usize,
    pub counts: BTreeMap<String, SplitCounts>,
    pub checksums: BTreeMap<String, String>,
    /// patient id -> split name
    pub split_assignment: BTreeMap<String, String>,
    /// record ids whose labels were flipped, for noise-oracle evaluation
    pub flipped_records: Vec<String>,
}

pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct MetaLine {
    record_id: String,
    patient_id: String,
    offset: u64,
    n_samples: usize,
    label: Rhythm,
    mask_rle: Vec<[usize; 2]>,
    corruption_fraction: f64,
    flipped: bool,
}

/// Encode a 0/1 mask as `[start, len]` runs of ones.
pub fn mask_to_rle(mask: &[u8]) -> Vec<[usize; 2]> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] == 1 {
            let start = i;
            while i < mask.len() && mask[i] == 1 {
                i += 1;
            }
            runs.push([start, i - start]);
        } else {
            i += 1;
        }
    }
    runs
}

/// Inverse of [`mask_to_rle`]; errors when a run exceeds the mask length.
pub fn rle_to_mask(len: usize, runs: &[[usize; 2]]) -> Result<Vec<u8>> {
    let mut mask = vec![0u8; len];
    for &[start, run_len] in runs {
        if start + run_len > len {
            return Err(SquwaError::mask(format!(
                "run [{start}, {run_len}] exceeds mask length {len}"
            )));
        }
        for m in &mut mask[start..start + run_len] {
            *m = 1;
        }
    }
    Ok(mask)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Write the corpus under `dir`, returning the manifest (also saved there).
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<CorpusManifest> {
    let mut counts = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    let mut split_assignment = BTreeMap::new();
    let mut flipped_records = Vec::new();

    for m in &corpus.meta {
        split_assignment.insert(m.patient_id.clone(), m.split.dir_name().to_string());
        if m.flipped {
            flipped_records.push(m.record_id.clone());
        }
    }

    for split in Split::ALL {
        let split_dir = dir.join(split.dir_name());
        fs::create_dir_all(&split_dir)?;
        let mut bin = Vec::new();
        let mut jsonl = String::new();
        let (mut af, mut non_af) = (0usize, 0usize);
        for &i in &corpus.indices(split) {
            let record = &corpus.records[i];
            let m = &corpus.meta[i];
            match record.label {
                Rhythm::Af => af += 1,
                Rhythm::NonAf => non_af += 1,
            }
            let offset = bin.len() as u64;
            for v in &record.samples {
                bin.extend_from_slice(&v.to_le_bytes());
            }
            let mask_rle = record
                .quality_mask
                .as_ref()
                .map(|m| mask_to_rle(m))
                .unwrap_or_default();
            let line = MetaLine {
                record_id: m.record_id.clone(),
                patient_id: m.patient_id.clone(),
                offset,
                n_samples: record.samples.len(),
                label: record.label,
                mask_rle,
                corruption_fraction: m.corruption_fraction,
                flipped: m.flipped,
            };
            jsonl.push_str(&serde_json::to_string(&line).expect("serializable meta"));
            jsonl.push('\n');
        }
        fs::write(split_dir.join("records.bin"), &bin)?;
        fs::write(split_dir.join("meta.jsonl"), jsonl.as_bytes())?;
        checksums.insert(
            format!("{}/records.bin", split.dir_name()),
            sha256_hex(&bin),
        );
        checksums.insert(
            format!("{}/meta.jsonl", split.dir_name()),
            sha256_hex(jsonl.as_bytes()),
        );
        counts.insert(split.dir_name().to_string(), SplitCounts { af, non_af });
    }

    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        config: corpus.config.clone(),
        record_len: corpus.config.record_len(),
        counts,
        checksums,
        split_assignment,
        flipped_records,
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    f.write_all(
        serde_json::to_string_pretty(&manifest)
            .expect("serializable")
            .as_bytes(),
    )?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

/// Read a corpus back, verifying every checksum first.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_bytes = fs::read(dir.join("manifest.json"))?;
    let manifest: CorpusManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| SquwaError::version(format!("unparseable manifest: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(SquwaError::version(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }

    let mut records = Vec::new();
    let mut meta = Vec::new();
    for split in Split::ALL {
        let split_dir = dir.join(split.dir_name());
        let bin = fs::read(split_dir.join("records.bin"))?;
        let jsonl = fs::read(split_dir.join("meta.jsonl"))?;
        for (file, bytes) in [("records.bin", &bin), ("meta.jsonl", &jsonl)] {
            let key = format!("{}/{file}", split.dir_name());
            let want = manifest.checksums.get(&key).ok_or_else(|| {
                SquwaError::checksum(format!("manifest lacks checksum for {key}"))
            })?;
            let got = sha256_hex(bytes);
            if &got != want {
                return Err(SquwaError::checksum(format!(
                    "{key}: checksum mismatch (manifest {want}, file {got})"
                )));
            }
        }

        for line in BufReader::new(&jsonl[..]).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ml: MetaLine = serde_json::from_str(&line)
                .map_err(|e| SquwaError::version(format!("bad meta line: {e}")))?;
            let start = ml.offset as usize;
            let end = start + ml.n_samples * 4;
            if end > bin.len() {
                return Err(SquwaError::version(format!(
                    "record {} extends past records.bin",
                    ml.record_id
                )));
            }
            let samples: Vec<f32> = bin[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let mask = rle_to_mask(ml.n_samples, &ml.mask_rle)?;
            records.push(PpgRecord {
                samples,
                fs: manifest.config.fs,
                label: ml.label,
                quality_mask: Some(mask),
                record_id: ml.record_id.clone(),
            });
            meta.push(RecordMeta {
                record_id: ml.record_id,
                patient_id: ml.patient_id,
                split,
                corruption_fraction: ml.corruption_fraction,
                flipped: ml.flipped,
            });
        }
    }

    Ok(Corpus {
        records,
        meta,
        config: manifest.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_records: 48,
            duration_s: 5.0,
            corruption_fraction_range: (0.0, 0.4),
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn splits_are_disjoint_by_patient() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let mut by_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for m in &corpus.meta {
            by_split
                .entry(m.split)
                .or_default()
                .insert(m.patient_id.clone());
        }
        let train = &by_split[&Split::Train];
        let val = &by_split[&Split::Val];
        let test = &by_split[&Split::Test];
        assert!(train.is_disjoint(val));
        assert!(train.is_disjoint(test));
        assert!(val.is_disjoint(test));
        assert!(!train.is_empty() && !val.is_empty() && !test.is_empty());
    }

    #[test]
    fn every_split_has_both_classes() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        for split in Split::ALL {
            let (af, non_af) = corpus.class_counts(split);
            assert!(af > 0 && non_af > 0, "{split}: af={af} non_af={non_af}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small_cfg()).unwrap();
        let b = generate_corpus(&small_cfg()).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.samples, rb.samples);
            assert_eq!(ra.label, rb.label);
        }
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();

        assert_eq!(corpus.len(), back.len());
        // Order within a split is preserved; match records by id.
        let by_id: BTreeMap<&str, &PpgRecord> = corpus
            .records
            .iter()
            .map(|r| (r.record_id.as_str(), r))
            .collect();
        for r in &back.records {
            let orig = by_id[r.record_id.as_str()];
            assert_eq!(r.samples, orig.samples, "{}", r.record_id);
            assert_eq!(r.label, orig.label);
            assert_eq!(r.quality_mask, orig.quality_mask);
        }
        assert_eq!(manifest.counts.len(), 3);
    }

    #[test]
    fn manifest_counts_match_actual_counts() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        for split in Split::ALL {
            let (af, non_af) = back.class_counts(split);
            let c = &manifest.counts[split.dir_name()];
            assert_eq!((c.af, c.non_af), (af, non_af), "{split}");
        }
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&small_cfg()).unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let path = dir.path().join("train/records.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 0xFF;
        fs::write(&path, bytes).unwrap();
        let err = read_corpus(dir.path()).unwrap_err();
        assert_eq!(err.kind(), "ChecksumError");
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = read_corpus(Path::new("/no/such/corpus")).unwrap_err();
        assert_eq!(err.kind(), "IOError");
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_corpus(&corpus, d1.path()).unwrap();
        write_corpus(&corpus, d2.path()).unwrap();
        for rel in [
            "manifest.json",
            "train/records.bin",
            "train/meta.jsonl",
            "val/meta.jsonl",
        ] {
            let a = fs::read(d1.path().join(rel)).unwrap();
            let b = fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between writes");
        }
    }

    #[test]
    fn train_flips_recorded_in_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = generate_corpus(&small_cfg()).unwrap();
        let n_train = corpus.indices(Split::Train).len();
        let flipped = corpus
            .flip_train_labels(0.25, &mut stream_rng(3, 0))
            .unwrap();
        assert_eq!(flipped.len(), (0.25 * n_train as f64).round() as usize);
        assert!(flipped
            .iter()
            .all(|&i| corpus.meta[i].split == Split::Train));

        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(manifest.flipped_records.len(), flipped.len());
        let back = read_corpus(dir.path()).unwrap();
        let flipped_ids: BTreeSet<&str> = manifest
            .flipped_records
            .iter()
            .map(|s| s.as_str())
            .collect();
        for (r, m) in back.records.iter().zip(&back.meta) {
            assert_eq!(m.flipped, flipped_ids.contains(r.record_id.as_str()));
        }
    }

    proptest! {
        #[test]
        fn rle_round_trips(mask in proptest::collection::vec(0u8..=1, 0..300)) {
            let rle = mask_to_rle(&mask);
            let back = rle_to_mask(mask.len(), &rle).unwrap();
            prop_assert_eq!(back, mask);
        }
    }

    #[test]
    fn rle_rejects_overlong_runs() {
        let err = rle_to_mask(10, &[[8, 5]]).unwrap_err();
        assert_eq!(err.kind(), "MaskError");
    }
}
