use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotate::annotate_signal;
use crate::dsp::{preprocess_signal, FilterSpec, Label, RawSignal, PULSE_LEN};
use crate::error::{Error, Result};
use crate::synthgen::{fmt_f64, GroundTruth};

/// Share of pulses assigned to the training split.
pub const TRAIN_SHARE: f64 = 0.7;
/// Annotation fractions accepted by grid runs.
pub const FRACTIONS: [f64; 4] = [0.025, 0.05, 0.075, 0.10];

const PSDS_MAGIC: &[u8; 4] = b"PSDS";
const PSDS_VERSION: u32 = 1;
const PSDS_RECORD: usize = 4 + 4 + 1 + 1 + 1 + 8 * PULSE_LEN;
const NO_LABEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// Check that `fraction` is one of [`FRACTIONS`].
pub fn validate_fraction(fraction: f64) -> Result<f64> {
    FRACTIONS
        .iter()
        .copied()
        .find(|f| (f - fraction).abs() < 1e-9)
        .ok_or_else(|| {
            Error::config(
                "fractions",
                format!("annotation fraction {fraction} must be one of 2.5%, 5%, 7.5%, 10%"),
            )
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseRecord {
    pub signal_id: u32,
    pub pulse_index: u32,
    pub values: Vec<f64>,
    /// Statistical auto-annotation.
    pub label: Option<Label>,
    pub split: Split,
    pub annotated: bool,
    /// Generator ground truth; kept out of the dataset file.
    pub truth: Option<Label>,
}

/// Who is reading the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Pretrain,
    Finetune,
    Evaluate,
}

/// Which records a reader touched: train-annotated, train-unannotated, eval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccessCounts {
    pub annotated: u64,
    pub unannotated: u64,
    pub eval: u64,
}

/// Per-purpose read counters.
#[derive(Debug, Default)]
pub struct AccessAudit {
    counts: [[AtomicU64; 3]; 3],
}

impl AccessAudit {
    fn record(&self, purpose: Purpose, r: &PulseRecord) {
        let col = match (r.split, r.annotated) {
            (Split::Eval, _) => 2,
            (Split::Train, true) => 0,
            (Split::Train, false) => 1,
        };
        self.counts[purpose as usize][col].fetch_add(1, Ordering::Relaxed);
    }

    pub fn counts(&self, purpose: Purpose) -> AccessCounts {
        let c = &self.counts[purpose as usize];
        AccessCounts {
            annotated: c[0].load(Ordering::Relaxed),
            unannotated: c[1].load(Ordering::Relaxed),
            eval: c[2].load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.counts.iter().flatten().for_each(|c| c.store(0, Ordering::Relaxed));
    }
}

/// Labeled rows ready for training or scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledRows {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

/// Which label column scores predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Annotation,
    Truth,
}

#[derive(Debug, Default)]
pub struct PulseDataset {
    pub records: Vec<PulseRecord>,
    pub audit: AccessAudit,
}

impl Clone for PulseDataset {
    fn clone(&self) -> Self {
        Self {
            records: self.records.clone(),
            audit: AccessAudit::default(),
        }
    }
}

impl PulseDataset {
    pub fn new(records: Vec<PulseRecord>) -> Self {
        Self {
            records,
            audit: AccessAudit::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn n_annotated(&self) -> usize {
        self.records.iter().filter(|r| r.annotated).count()
    }

    pub fn has_truth(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.truth.is_some())
    }

    /// Assign a `TRAIN_SHARE` split by pulse count from a seeded permutation.
    pub fn assign_split(&mut self, seed: u64) {
        let n = self.records.len();
        let n_train = (TRAIN_SHARE * n as f64).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (rank, i) in idx.into_iter().enumerate() {
            self.records[i].split = if rank < n_train { Split::Train } else { Split::Eval };
            self.records[i].annotated = false;
        }
    }

    /// Mark `round(fraction * len)` train pulses as annotated, drawn uniformly.
    pub fn assign_annotated(&mut self, fraction: f64, seed: u64) -> Result<usize> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::config("fraction", format!("must be in [0, 1], got {fraction}")));
        }
        let want = (fraction * self.records.len() as f64).round() as usize;
        let mut train: Vec<usize> = (0..self.records.len())
            .filter(|i| self.records[*i].split == Split::Train)
            .collect();
        if want > train.len() {
            return Err(Error::Data(format!(
                "cannot annotate {want} pulses from a train split of {}",
                train.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        train.shuffle(&mut rng);
        self.records.iter_mut().for_each(|r| r.annotated = false);
        for i in &train[..want] {
            self.records[*i].annotated = true;
        }
        Ok(want)
    }

    /// Values of every train pulse; labels are not read.
    pub fn unlabeled_train(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.split == Split::Train)
            .inspect(|r| self.audit.record(Purpose::Pretrain, r))
            .map(|r| r.values.clone())
            .collect()
    }

    /// Annotated train pulses with their auto-annotation labels.
    pub fn labeled_train(&self) -> Result<LabeledRows> {
        let mut out = LabeledRows::default();
        for r in self.records.iter().filter(|r| r.split == Split::Train && r.annotated) {
            self.audit.record(Purpose::Finetune, r);
            let label = r.label.ok_or_else(|| {
                Error::Data(format!(
                    "annotated pulse {}/{} has no label",
                    r.signal_id, r.pulse_index
                ))
            })?;
            out.rows.push(r.values.clone());
            out.labels.push(label);
        }
        Ok(out)
    }

    /// Eval pulses with labels from `source`.
    pub fn eval_set(&self, source: LabelSource) -> Result<LabeledRows> {
        let mut out = LabeledRows::default();
        for r in self.records.iter().filter(|r| r.split == Split::Eval) {
            self.audit.record(Purpose::Evaluate, r);
            let label = match source {
                LabelSource::Annotation => r.label,
                LabelSource::Truth => r.truth,
            }
            .ok_or_else(|| Error::Data(format!("eval pulse {}/{} has no label", r.signal_id, r.pulse_index)))?;
            out.rows.push(r.values.clone());
            out.labels.push(label);
        }
        Ok(out)
    }
}

/// Preprocess and auto-annotate each signal, then split.
///
/// Signals with too few pulses to form bands are skipped. With `truths`, each
/// pulse also takes the flag of the generated cycle it overlaps most.
pub fn build_dataset(
    signals: &[RawSignal],
    truths: Option<&[GroundTruth]>,
    filter: &FilterSpec,
    split_seed: u64,
) -> Result<PulseDataset> {
    collect(signals, truths, filter, split_seed, true)
}

/// [`build_dataset`] without annotation: every pulse is kept, unlabeled.
pub fn preprocess_dataset(
    signals: &[RawSignal],
    truths: Option<&[GroundTruth]>,
    filter: &FilterSpec,
    split_seed: u64,
) -> Result<PulseDataset> {
    collect(signals, truths, filter, split_seed, false)
}

fn collect(
    signals: &[RawSignal],
    truths: Option<&[GroundTruth]>,
    filter: &FilterSpec,
    split_seed: u64,
    annotate: bool,
) -> Result<PulseDataset> {
    if let Some(t) = truths {
        if t.len() != signals.len() {
            return Err(Error::Data(format!("{} signals but {} ground-truth entries", signals.len(), t.len())));
        }
    }
    let mut records = Vec::new();
    for (sid, signal) in signals.iter().enumerate() {
        let pulses = preprocess_signal(signal, filter)?;
        let labels: Vec<Option<Label>> = if annotate {
            let resampled: Vec<&[f64]> = pulses.iter().map(|p| p.resampled.as_slice()).collect();
            match annotate_signal(sid as u32, &resampled) {
                Ok(a) => a.labels.into_iter().map(Some).collect(),
                Err(Error::Annotation { .. }) => continue,
                Err(e) => return Err(e),
            }
        } else {
            vec![None; pulses.len()]
        };
        for (k, (p, label)) in pulses.into_iter().zip(labels).enumerate() {
            let truth = truths.map(|t| {
                let g = &t[sid];
                let hit = g.best_overlap(p.span.0, p.span.1);
                if hit.is_some_and(|h| g.flags[h]) {
                    Label::Artifact
                } else {
                    Label::Clean
                }
            });
            records.push(PulseRecord {
                signal_id: sid as u32,
                pulse_index: k as u32,
                values: p.pulse.values,
                label,
                split: Split::Train,
                annotated: false,
                truth,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::Data("no pulses survived preprocessing".into()));
    }
    let mut ds = PulseDataset::new(records);
    ds.assign_split(split_seed);
    Ok(ds)
}

fn csv_header() -> String {
    let mut h = String::from("signal_id,pulse_index");
    for i in 0..PULSE_LEN {
        h.push_str(&format!(",v{i}"));
    }
    h.push_str(",label,split,annotated");
    h
}

/// Dataset CSV: `signal_id,pulse_index,v0..v255,label,split,annotated`.
pub fn write_dataset_csv(path: &Path, ds: &PulseDataset) -> Result<()> {
    let mut out = csv_header();
    out.push('\n');
    for r in &ds.records {
        out.push_str(&format!("{},{}", r.signal_id, r.pulse_index));
        for v in &r.values {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        let label = r.label.map(Label::as_str).unwrap_or("");
        out.push_str(&format!(",{label},{},{}\n", r.split, u8::from(r.annotated)));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<PulseDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(csv_header().as_str()) {
        return Err(Error::format(path, "unexpected dataset header"));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != PULSE_LEN + 5 {
            return Err(bad(&format!("expected {} fields, got {}", PULSE_LEN + 5, f.len())));
        }
        let values = f[2..2 + PULSE_LEN]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>>>()?;
        let label = match f[PULSE_LEN + 2] {
            "" => None,
            s => Some(s.parse::<Label>().map_err(|_| bad("bad label"))?),
        };
        records.push(PulseRecord {
            signal_id: f[0].parse().map_err(|_| bad("bad signal_id"))?,
            pulse_index: f[1].parse().map_err(|_| bad("bad pulse_index"))?,
            values,
            label,
            split: f[PULSE_LEN + 3].parse().map_err(|_| bad("bad split"))?,
            annotated: match f[PULSE_LEN + 4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("bad annotated flag")),
            },
            truth: None,
        });
    }
    Ok(PulseDataset::new(records))
}

/// Binary dataset: magic, version, count, then fixed-width little-endian records.
pub fn encode_psds(ds: &PulseDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ds.len() * PSDS_RECORD);
    out.extend_from_slice(PSDS_MAGIC);
    out.extend_from_slice(&PSDS_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for r in &ds.records {
        out.extend_from_slice(&r.signal_id.to_le_bytes());
        out.extend_from_slice(&r.pulse_index.to_le_bytes());
        out.push(r.label.map_or(NO_LABEL, |l| l.class_index() as u8));
        out.push(u8::from(r.split == Split::Eval));
        out.push(u8::from(r.annotated));
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_psds(buf: &[u8], path: &Path) -> Result<PulseDataset> {
    let bad = |m: String| Error::format(path, m);
    if buf.len() < 16 || &buf[..4] != PSDS_MAGIC {
        return Err(bad("missing PSDS magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != PSDS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let body = &buf[16..];
    if Some(body.len()) != n.checked_mul(PSDS_RECORD) {
        return Err(bad(format!("expected {n} records of {PSDS_RECORD} bytes, found {} bytes", body.len())));
    }
    let mut records = Vec::with_capacity(n);
    for rec in body.chunks_exact(PSDS_RECORD) {
        let label = match rec[8] {
            NO_LABEL => None,
            0 => Some(Label::Clean),
            1 => Some(Label::Artifact),
            b => return Err(bad(format!("bad label byte {b}"))),
        };
        let split = match rec[9] {
            0 => Split::Train,
            1 => Split::Eval,
            b => return Err(bad(format!("bad split byte {b}"))),
        };
        let annotated = match rec[10] {
            0 => false,
            1 => true,
            b => return Err(bad(format!("bad annotated byte {b}"))),
        };
        let values = rec[11..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push(PulseRecord {
            signal_id: u32::from_le_bytes(rec[0..4].try_into().expect("4 bytes")),
            pulse_index: u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes")),
            values,
            label,
            split,
            annotated,
            truth: None,
        });
    }
    Ok(PulseDataset::new(records))
}

pub fn write_psds(path: &Path, ds: &PulseDataset) -> Result<()> {
    std::fs::write(path, encode_psds(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_psds(path: &Path) -> Result<PulseDataset> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_psds(&buf, path)
}

/// Read either dataset format, chosen by the `.psds` extension.
pub fn read_dataset(path: &Path) -> Result<PulseDataset> {
    if path.extension().is_some_and(|e| e == "psds") {
        read_psds(path)
    } else {
        read_dataset_csv(path)
    }
}

pub fn write_dataset(path: &Path, ds: &PulseDataset) -> Result<()> {
    if path.extension().is_some_and(|e| e == "psds") {
        write_psds(path, ds)
    } else {
        write_dataset_csv(path, ds)
    }
}

/// Reference labels CSV: `signal_id,pulse_index,truth`.
pub fn write_reference_csv(path: &Path, ds: &PulseDataset) -> Result<()> {
    let mut out = String::from("signal_id,pulse_index,truth\n");
    for r in &ds.records {
        let t = r.truth.map(Label::as_str).unwrap_or("");
        out.push_str(&format!("{},{},{t}\n", r.signal_id, r.pulse_index));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Attach reference labels to the matching records.
pub fn read_reference_csv(path: &Path, ds: &mut PulseDataset) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("signal_id,pulse_index,truth") {
        return Err(Error::format(path, "expected header `signal_id,pulse_index,truth`"));
    }
    let mut map = std::collections::HashMap::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::format(path, format!("line {}: malformed row", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let key: (u32, u32) = (f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?);
        let label = match f[2] {
            "" => None,
            s => Some(s.parse::<Label>().map_err(|_| bad())?),
        };
        map.insert(key, label);
    }
    for r in &mut ds.records {
        r.truth = map.get(&(r.signal_id, r.pulse_index)).copied().flatten();
    }
    Ok(())
}
