use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::dataset::{validate_fraction, LabelSource, PulseDataset};
use super::finetune::{evaluate, finetune, FinetuneConfig};
use super::metrics::{median, MetricsReport};
use crate::error::{Error, Result};
use crate::nets::{Backbone, BackboneConfigs};
use crate::ssl::{
    pretrain_autoencoder, pretrain_contrastive, pretrain_dino, pretrain_masked, AugmentSpec, DinoConfig, LossKind,
    LossParams, LossRecord, PretrainConfig, DEFAULT_MASK_SIZE,
};
use crate::synthgen::fmt_f64;

/// One column of the comparison: how the encoder is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Supervised,
    Masking,
    Contrastive(LossKind),
    Dino,
    Autoencoder,
}

impl Arm {
    pub fn paradigm(self) -> &'static str {
        match self {
            Arm::Supervised => "supervised",
            Arm::Masking => "masking",
            Arm::Contrastive(_) => "contrastive",
            Arm::Dino => "dino",
            Arm::Autoencoder => "autoencoder",
        }
    }

    /// Loss column of the results table; `-` outside the contrastive arms.
    pub fn loss_kind(self) -> &'static str {
        match self {
            Arm::Contrastive(k) => k.as_str(),
            _ => "-",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Contrastive(k) => write!(f, "contrastive:{k}"),
            other => f.write_str(other.paradigm()),
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    /// `supervised`, `masking`, `dino`, `autoencoder` or `contrastive[:loss]`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        let arm = match (head.to_ascii_lowercase().as_str(), tail) {
            ("supervised", None) => Arm::Supervised,
            ("masking" | "masked", None) => Arm::Masking,
            ("dino", None) => Arm::Dino,
            ("autoencoder" | "ae", None) => Arm::Autoencoder,
            ("contrastive", None) => Arm::Contrastive(LossKind::SmoothInfoNce),
            ("contrastive", Some(k)) => Arm::Contrastive(k.parse()?),
            _ => {
                return Err(Error::config(
                    "paradigms",
                    format!("unknown paradigm `{s}` (expected supervised, masking, contrastive[:loss], dino or autoencoder)"),
                ))
            }
        };
        Ok(arm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub backbones: Vec<Backbone>,
    pub arms: Vec<Arm>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub nets: BackboneConfigs,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub loss: LossParams,
    pub augment: AugmentSpec,
    pub dino: DinoConfig,
    pub mask_size: usize,
    pub label_source: LabelSource,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            backbones: Backbone::ALL.to_vec(),
            arms: vec![Arm::Supervised, Arm::Contrastive(LossKind::SmoothInfoNce)],
            fractions: super::dataset::FRACTIONS.to_vec(),
            seeds: vec![0, 1, 2],
            nets: BackboneConfigs::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            loss: LossParams::default(),
            augment: AugmentSpec::default(),
            dino: DinoConfig::default(),
            mask_size: DEFAULT_MASK_SIZE,
            label_source: LabelSource::Truth,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbones.is_empty() || self.arms.is_empty() || self.fractions.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("grid", "backbones, paradigms, fractions and seeds must be non-empty"));
        }
        for f in &self.fractions {
            validate_fraction(*f)?;
        }
        self.nets.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        self.dino.validate()?;
        if self.mask_size > crate::dsp::PULSE_LEN {
            return Err(Error::config("mask_size", "must be at most 256"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub backbone: Backbone,
    pub arm: Arm,
    pub fraction: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Loss log of one pretraining pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLog {
    pub backbone: Backbone,
    pub arm: Arm,
    pub seed: u64,
    pub log: Vec<LossRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutput {
    pub rows: Vec<ResultRow>,
    pub logs: Vec<PretrainLog>,
}

fn cell_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Pretrain once per (backbone, arm, seed), then fine-tune and score every fraction.
///
/// The annotated mask of `ds` is redrawn per (fraction, seed) and left in the
/// state of the last cell.
pub fn run_grid(ds: &mut PulseDataset, cfg: &GridConfig) -> Result<GridOutput> {
    cfg.validate()?;
    let eval = ds.eval_set(cfg.label_source)?;
    let mut out = GridOutput::default();
    for &backbone in &cfg.backbones {
        for &arm in &cfg.arms {
            for &seed in &cfg.seeds {
                let pre = pretrain_arm(ds, cfg, backbone, arm, seed)?;
                if let Some(p) = &pre {
                    out.logs.push(PretrainLog {
                        backbone,
                        arm,
                        seed,
                        log: p.log.clone(),
                    });
                }
                for &fraction in &cfg.fractions {
                    let fraction = validate_fraction(fraction)?;
                    let salt = (fraction * 1000.0).round() as u64;
                    ds.assign_annotated(fraction, cell_seed(seed, salt))?;
                    let labeled = ds.labeled_train()?;
                    let ft = FinetuneConfig {
                        seed: cell_seed(seed, 1 + salt),
                        ..cfg.finetune
                    };
                    let trained = finetune(
                        backbone,
                        &cfg.nets,
                        pre.as_ref().map(|p| &p.store),
                        &labeled.rows,
                        &labeled.labels,
                        &ft,
                    )?;
                    let metrics = evaluate(&trained.classifier, &trained.store, &eval.rows, &eval.labels)?;
                    out.rows.push(ResultRow {
                        backbone,
                        arm,
                        fraction,
                        seed,
                        metrics,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn pretrain_arm(
    ds: &PulseDataset,
    cfg: &GridConfig,
    backbone: Backbone,
    arm: Arm,
    seed: u64,
) -> Result<Option<crate::ssl::PretrainOutput>> {
    if arm == Arm::Supervised {
        return Ok(None);
    }
    let rows = ds.unlabeled_train();
    let pc = PretrainConfig {
        seed: cell_seed(seed, 77),
        ..cfg.pretrain
    };
    let out = match arm {
        Arm::Supervised => unreachable!(),
        Arm::Masking => pretrain_masked(backbone, &cfg.nets, &rows, cfg.mask_size, &pc)?,
        Arm::Autoencoder => pretrain_autoencoder(backbone, &cfg.nets, &rows, &pc)?,
        Arm::Contrastive(kind) => {
            let params = LossParams { kind, ..cfg.loss };
            pretrain_contrastive(backbone, &cfg.nets, &rows, &params, &cfg.augment, &pc)?
        }
        Arm::Dino => pretrain_dino(backbone, &cfg.nets, &rows, &cfg.dino, &cfg.augment, &pc)?,
    };
    Ok(Some(out))
}

pub const RESULTS_HEADER: &str = "backbone,paradigm,loss_kind,fraction,seed,acc,pre,rec,f1";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.backbone,
            r.arm.paradigm(),
            r.arm.loss_kind(),
            fmt_f64(r.fraction),
            r.seed,
            fmt_f64(m.accuracy),
            fmt_f64(m.precision),
            fmt_f64(m.recall),
            fmt_f64(m.f1)
        ));
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path, results_csv(rows)).map_err(|e| Error::io(path, e))
}

/// A results row as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultEntry {
    pub backbone: String,
    pub paradigm: String,
    pub loss_kind: String,
    pub fraction: f64,
    pub seed: u64,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

impl From<&ResultRow> for ResultEntry {
    fn from(r: &ResultRow) -> Self {
        Self {
            backbone: r.backbone.to_string(),
            paradigm: r.arm.paradigm().to_string(),
            loss_kind: r.arm.loss_kind().to_string(),
            fraction: r.fraction,
            seed: r.seed,
            acc: r.metrics.accuracy,
            pre: r.metrics.precision,
            rec: r.metrics.recall,
            f1: r.metrics.f1,
        }
    }
}

pub fn parse_results_csv(text: &str, path: &Path) -> Result<Vec<ResultEntry>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RESULTS_HEADER) {
        return Err(Error::format(path, format!("expected header `{RESULTS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        out.push(ResultEntry {
            backbone: f[0].to_string(),
            paradigm: f[1].to_string(),
            loss_kind: f[2].to_string(),
            fraction: num(f[3], "bad fraction")?,
            seed: f[4].parse().map_err(|_| bad("bad seed"))?,
            acc: num(f[5], "bad acc")?,
            pre: num(f[6], "bad pre")?,
            rec: num(f[7], "bad rec")?,
            f1: num(f[8], "bad f1")?,
        });
    }
    Ok(out)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text, path)
}

/// Median over seeds of one (backbone, paradigm, loss_kind, fraction) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub backbone: String,
    pub paradigm: String,
    pub loss_kind: String,
    pub fraction: f64,
    pub n_seeds: usize,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

/// Groups in first-appearance order.
pub fn summarize(entries: &[ResultEntry]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, u64), Vec<&ResultEntry>> = BTreeMap::new();
    for e in entries {
        let key = (e.backbone.clone(), e.paradigm.clone(), e.loss_kind.clone(), e.fraction.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(e);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let col = |f: fn(&ResultEntry) -> f64| median(&g.iter().map(|e| f(e)).collect::<Vec<_>>());
            SummaryRow {
                backbone: key.0.clone(),
                paradigm: key.1.clone(),
                loss_kind: key.2.clone(),
                fraction: f64::from_bits(key.3),
                n_seeds: g.len(),
                acc: col(|e| e.acc),
                pre: col(|e| e.pre),
                rec: col(|e| e.rec),
                f1: col(|e| e.f1),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "backbone,paradigm,loss_kind,fraction,n_seeds,acc,pre,rec,f1";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.backbone,
            r.paradigm,
            r.loss_kind,
            fmt_f64(r.fraction),
            r.n_seeds,
            fmt_f64(r.acc),
            fmt_f64(r.pre),
            fmt_f64(r.rec),
            fmt_f64(r.f1)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Label;
    use crate::nets::{FcnnConfig, MlpConfig};
    use crate::trainer::dataset::{Purpose, PulseRecord, Split};

    pub(crate) fn toy(n: usize) -> PulseDataset {
        let records = (0..n)
            .map(|i| {
                let art = i % 4 == 0;
                let t = crate::diffcore::seeded_tensor(&[256], i as u64, if art { 1.0 } else { 0.1 });
                let values: Vec<f64> = (0..256)
                    .map(|k| (k as f64 * std::f64::consts::PI / 128.0).sin() + t.data()[k])
                    .collect();
                let label = Some(if art { Label::Artifact } else { Label::Clean });
                PulseRecord {
                    signal_id: 0,
                    pulse_index: i as u32,
                    values: crate::dsp::normalize(&values).unwrap(),
                    label,
                    split: Split::Train,
                    annotated: false,
                    truth: label,
                }
            })
            .collect();
        let mut ds = PulseDataset::new(records);
        ds.assign_split(5);
        ds
    }

    fn tiny_grid() -> GridConfig {
        GridConfig {
            backbones: vec![Backbone::Mlp, Backbone::Fcnn],
            arms: vec![Arm::Supervised, Arm::Masking, Arm::Contrastive(LossKind::SmoothInfoNce)],
            seeds: vec![0, 1, 2],
            nets: BackboneConfigs {
                mlp: MlpConfig {
                    hidden: vec![32],
                    dropout: 0.0,
                    batch_size: 16,
                    ..MlpConfig::default()
                },
                fcnn: FcnnConfig {
                    n_blocks: 1,
                    filters: 8,
                    batch_size: 16,
                    ..FcnnConfig::default()
                },
                ..BackboneConfigs::default()
            },
            pretrain: PretrainConfig {
                epochs: 1,
                ..PretrainConfig::default()
            },
            finetune: FinetuneConfig {
                epochs: 1,
                ..FinetuneConfig::default()
            },
            ..GridConfig::default()
        }
    }

    #[test]
    fn cardinality_and_isolation() {
        let mut ds = toy(1200);
        let out = run_grid(&mut ds, &tiny_grid()).unwrap();
        assert_eq!(out.rows.len(), 2 * 3 * 4 * 3);
        assert_eq!(out.logs.len(), 2 * 2 * 3);
        let pre = ds.audit.counts(Purpose::Pretrain);
        let ft = ds.audit.counts(Purpose::Finetune);
        assert_eq!((pre.eval, ft.eval, ft.unannotated), (0, 0, 0));
        let entries: Vec<ResultEntry> = out.rows.iter().map(ResultEntry::from).collect();
        let summary = summarize(&entries);
        assert_eq!(summary.len(), 2 * 3 * 4);
        assert!(summary.iter().all(|s| s.n_seeds == 3));
    }

    #[test]
    fn supervised_reads_only_annotated() {
        let mut ds = toy(1200);
        let cfg = GridConfig {
            arms: vec![Arm::Supervised],
            backbones: vec![Backbone::Mlp],
            ..tiny_grid()
        };
        run_grid(&mut ds, &cfg).unwrap();
        let pre = ds.audit.counts(Purpose::Pretrain);
        assert_eq!(pre, Default::default());
        let ft = ds.audit.counts(Purpose::Finetune);
        assert!(ft.annotated > 0);
        assert_eq!((ft.unannotated, ft.eval), (0, 0));
    }

    #[test]
    fn results_round_trip_and_are_deterministic() {
        let cfg = GridConfig {
            arms: vec![Arm::Contrastive(LossKind::InfoNce)],
            backbones: vec![Backbone::Mlp],
            fractions: vec![0.1],
            seeds: vec![4],
            ..tiny_grid()
        };
        let a = results_csv(&run_grid(&mut toy(1200), &cfg).unwrap().rows);
        let b = results_csv(&run_grid(&mut toy(1200), &cfg).unwrap().rows);
        assert_eq!(a, b);
        let parsed = parse_results_csv(&a, Path::new("r.csv")).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].loss_kind, "info_nce");
    }

    #[test]
    fn arm_parsing() {
        assert_eq!("contrastive:swce".parse::<Arm>().unwrap(), Arm::Contrastive(LossKind::Swce));
        assert_eq!("dino".parse::<Arm>().unwrap(), Arm::Dino);
        assert!(matches!("jigsaw".parse::<Arm>(), Err(Error::Config { .. })));
    }

    #[test]
    fn bad_fraction_rejected() {
        let cfg = GridConfig {
            fractions: vec![0.2],
            ..tiny_grid()
        };
        assert!(matches!(run_grid(&mut toy(50), &cfg), Err(Error::Config { .. })));
    }
}
