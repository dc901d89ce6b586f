//! `pssl` command-line driver.
//!
//! Every subcommand reads an optional TOML config (`--config`), applies its
//! flags on top, validates the result and only then touches the file system.
//! Paths are relative to `--workdir`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::diffcore::checkpoint;
use crate::dsp::FilterSpec;
use crate::error::{Error, Result};
use crate::nets::{Backbone, BackboneConfigs};
use crate::ssl::{
    epoch_means, pretrain_autoencoder, pretrain_contrastive, pretrain_dino, pretrain_masked, read_loss_log,
    write_loss_log, AugmentSpec, DinoConfig, LossKind, LossParams, LossRecord, Method, PretrainConfig,
    DEFAULT_MASK_SIZE,
};
use crate::synthgen::{fmt_f64, generate, read_signals_csv, read_truth_csv, write_signals_csv, write_truth_csv, SynthConfig};
use crate::trainer::{
    build_dataset, evaluate, finetune, load_classifier, preprocess_dataset, read_dataset, read_reference_csv, read_results_csv,
    run_grid, summarize, summary_csv, validate_fraction, write_dataset, write_reference_csv, write_results_csv,
    Arm, FinetuneConfig, GridConfig, LabelSource, PulseDataset, ResultEntry,
};

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "PSSL_SEED";

/// Grid settings as written in a config file. Fractions are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub backbones: Vec<String>,
    pub paradigms: Vec<String>,
    pub fractions: Vec<f64>,
    pub seeds: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            backbones: vec!["transformer".into()],
            paradigms: vec!["supervised".into(), "contrastive:smooth_info_nce".into()],
            fractions: vec![2.5, 5.0, 7.5, 10.0],
            seeds: 3,
        }
    }
}

/// Complete configuration of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub split_seed: u64,
    pub mask_size: Option<usize>,
    pub synth: SynthConfig,
    pub filter: FilterSpec,
    pub nets: BackboneConfigs,
    pub loss: LossParams,
    pub augment: AugmentSpec,
    pub dino: DinoConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub grid: GridSection,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.filter.validate(self.synth.fs)?;
        self.nets.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        self.dino.validate()?;
        if let Some(a) = &self.finetune.adasyn {
            a.validate()?;
        }
        if self.mask_size.is_some_and(|m| m > crate::dsp::PULSE_LEN) {
            return Err(Error::config("mask_size", "must be at most 256"));
        }
        self.grid_config().map(|_| ())
    }

    pub fn mask_size(&self) -> usize {
        self.mask_size.unwrap_or(DEFAULT_MASK_SIZE)
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let backbones = self
            .grid
            .backbones
            .iter()
            .map(|b| b.parse::<Backbone>())
            .collect::<Result<Vec<_>>>()?;
        let arms = self.grid.paradigms.iter().map(|a| a.parse::<Arm>()).collect::<Result<Vec<_>>>()?;
        let fractions = self
            .grid
            .fractions
            .iter()
            .map(|p| validate_fraction(p / 100.0))
            .collect::<Result<Vec<_>>>()?;
        if self.grid.seeds == 0 {
            return Err(Error::config("grid.seeds", "must be at least 1"));
        }
        let base = self.seed.unwrap_or(0);
        Ok(GridConfig {
            backbones,
            arms,
            fractions,
            seeds: (0..self.grid.seeds as u64).map(|s| base + s).collect(),
            nets: self.nets.clone(),
            pretrain: self.pretrain,
            finetune: self.finetune,
            loss: self.loss,
            augment: self.augment,
            dino: self.dino,
            mask_size: self.mask_size(),
            label_source: LabelSource::Truth,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "pssl", version, about = "Self-supervised pretraining and artifact detection for PPG pulses")]
pub struct Cli {
    /// Root for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; falls back to the config file, then PSSL_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus and its ground truth.
    Generate(GenerateArgs),
    /// Filter, segment, resample and normalize signals into an unlabeled dataset.
    Preprocess(PreprocessArgs),
    /// Preprocess and auto-annotate signals into a labeled dataset.
    Annotate(AnnotateArgs),
    /// Pretrain an encoder with a self-supervised objective.
    Pretrain(PretrainArgs),
    /// Train a classifier on the annotated subset.
    Finetune(FinetuneArgs),
    /// Score a classifier on the eval split.
    Evaluate(EvaluateArgs),
    /// Run the paradigm x fraction x seed grid.
    Grid(GridArgs),
    /// Summarize a results table and loss logs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n_signals: Option<usize>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub artifact_fraction: Option<f64>,
    #[arg(long, default_value = "signals.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "truth.csv")]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct SignalInput {
    #[arg(long, default_value = "signals.csv")]
    pub signals: PathBuf,
    /// Generator ground truth; enables the reference label file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "reference.csv")]
    pub reference: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub input: SignalInput,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub input: SignalInput,
    /// Per-pulse statistics and labels.
    #[arg(long, default_value = "labels.csv")]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "contrastive")]
    pub method: String,
    #[arg(long, default_value = "transformer")]
    pub backbone: String,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub mask_size: Option<usize>,
    #[arg(long, default_value = "pretrained.ckpt")]
    pub out: PathBuf,
    #[arg(long, default_value = "loss.csv")]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "transformer")]
    pub backbone: String,
    /// Pretrained encoder checkpoint.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Annotated share in percent: 2.5, 5, 7.5 or 10.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub fraction: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long)]
    pub no_adasyn: bool,
    #[arg(long, default_value = "classifier.ckpt")]
    pub out: PathBuf,
    /// Dataset with the drawn annotated mask.
    #[arg(long)]
    pub dataset_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "transformer")]
    pub backbone: String,
    #[arg(long, default_value = "classifier.ckpt")]
    pub model: PathBuf,
    /// Score against these reference labels instead of the dataset labels.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "reference.csv")]
    pub reference: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub backbones: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub paradigms: Option<Vec<String>>,
    /// Percentages.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "summary.csv")]
    pub summary: PathBuf,
    /// Directory for per-run pretraining loss logs.
    #[arg(long, default_value = "logs")]
    pub loss_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "results.csv")]
    pub results: PathBuf,
    /// Loss logs to turn into curves.
    #[arg(long, value_delimiter = ',')]
    pub logs: Vec<PathBuf>,
    /// Also read every `loss_*.csv` in this directory.
    #[arg(long)]
    pub loss_dir: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
}

struct Env {
    workdir: PathBuf,
    config: RunConfig,
}

impl Env {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if file.is_some() {
        return Ok(file);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(&cli.workdir.join(p))?,
        None => RunConfig::default(),
    };
    config.seed = resolve_seed(cli.seed, config.seed)?;
    let mut env = Env {
        workdir: cli.workdir,
        config,
    };
    match cli.command {
        Command::Generate(a) => cmd_generate(&mut env, a),
        Command::Preprocess(a) => cmd_signals(&mut env, &a.input, None),
        Command::Annotate(a) => cmd_signals(&mut env, &a.input, Some(&a.labels)),
        Command::Pretrain(a) => cmd_pretrain(&mut env, a),
        Command::Finetune(a) => cmd_finetune(&mut env, a),
        Command::Evaluate(a) => cmd_evaluate(&mut env, a),
        Command::Grid(a) => cmd_grid(&mut env, a),
        Command::Report(a) => cmd_report(&env, a),
    }
}

fn cmd_generate(env: &mut Env, a: GenerateArgs) -> Result<()> {
    let c = &mut env.config;
    if let Some(seed) = c.seed {
        c.synth.seed = seed;
    }
    if let Some(n) = a.n_signals {
        c.synth.n_signals = n;
    }
    if let Some(d) = a.duration {
        c.synth.duration_s = d;
    }
    if let Some(f) = a.artifact_fraction {
        c.synth.artifact_fraction = f;
    }
    c.validate()?;
    let (signals, truths) = generate(&c.synth)?;
    write_signals_csv(&env.path(&a.out), &signals)?;
    write_truth_csv(&env.path(&a.truth), &truths)
}

fn cmd_signals(env: &mut Env, a: &SignalInput, labels: Option<&PathBuf>) -> Result<()> {
    env.config.validate()?;
    let signals = read_signals_csv(&env.path(&a.signals))?;
    let truths = a.truth.as_ref().map(|p| read_truth_csv(&env.path(p))).transpose()?;
    let filter = env.config.filter;
    let split_seed = env.config.split_seed;
    let ds = match labels {
        Some(labels_path) => {
            let ds = build_dataset(&signals, truths.as_deref(), &filter, split_seed)?;
            write_label_rows(&env.path(labels_path), &signals, &filter)?;
            ds
        }
        None => preprocess_dataset(&signals, truths.as_deref(), &filter, split_seed)?,
    };
    write_dataset(&env.path(&a.out), &ds)?;
    if truths.is_some() {
        write_reference_csv(&env.path(&a.reference), &ds)?;
    }
    Ok(())
}

fn write_label_rows(path: &Path, signals: &[crate::dsp::RawSignal], filter: &FilterSpec) -> Result<()> {
    use crate::annotate::{annotate_signal, write_labels_csv, LabelRow};
    let mut rows = Vec::new();
    for (sid, s) in signals.iter().enumerate() {
        let pulses = crate::dsp::preprocess_signal(s, filter)?;
        let resampled: Vec<&[f64]> = pulses.iter().map(|p| p.resampled.as_slice()).collect();
        let Ok(ann) = annotate_signal(sid as u32, &resampled) else {
            continue;
        };
        for (k, (label, stats)) in ann.labels.iter().zip(&ann.stats).enumerate() {
            rows.push(LabelRow {
                signal_id: sid as u32,
                pulse_index: k as u32,
                label: *label,
                stats: *stats,
            });
        }
    }
    write_labels_csv(path, &rows)
}

fn load_dataset(env: &Env, p: &Path) -> Result<PulseDataset> {
    let ds = read_dataset(&env.path(p))?;
    if ds.is_empty() {
        return Err(Error::Data(format!("{} holds no pulses", p.display())));
    }
    Ok(ds)
}

fn cmd_pretrain(env: &mut Env, a: PretrainArgs) -> Result<()> {
    let c = &mut env.config;
    let method: Method = a.method.parse()?;
    let backbone: Backbone = a.backbone.parse()?;
    if let Some(l) = &a.loss {
        c.loss.kind = l.parse::<LossKind>()?;
    }
    if let Some(l) = a.lambda {
        c.loss.lambda = l;
    }
    if let Some(t) = a.tau {
        c.loss.tau = t;
    }
    if let Some(e) = a.epochs {
        c.pretrain.epochs = e;
    }
    if a.mask_size.is_some() {
        c.mask_size = a.mask_size;
    }
    c.pretrain.seed = c.seed.unwrap_or(c.pretrain.seed);
    c.validate()?;
    let ds = load_dataset(env, &a.dataset)?;
    let rows = ds.unlabeled_train();
    let c = &env.config;
    let out = match method {
        Method::Masking => pretrain_masked(backbone, &c.nets, &rows, c.mask_size(), &c.pretrain)?,
        Method::Autoencoder => pretrain_autoencoder(backbone, &c.nets, &rows, &c.pretrain)?,
        Method::Contrastive => pretrain_contrastive(backbone, &c.nets, &rows, &c.loss, &c.augment, &c.pretrain)?,
        Method::Dino => pretrain_dino(backbone, &c.nets, &rows, &c.dino, &c.augment, &c.pretrain)?,
    };
    checkpoint::save(&out.store, &env.path(&a.out))?;
    write_loss_log(&env.path(&a.log), &out.log)
}

fn cmd_finetune(env: &mut Env, a: FinetuneArgs) -> Result<()> {
    let backbone: Backbone = a.backbone.parse()?;
    let fraction = validate_fraction(a.fraction / 100.0)?;
    let c = &mut env.config;
    if let Some(e) = a.epochs {
        c.finetune.epochs = e;
    }
    if a.freeze_encoder {
        c.finetune.freeze_encoder = true;
    }
    if a.no_adasyn {
        c.finetune.adasyn = None;
    }
    c.finetune.seed = c.seed.unwrap_or(c.finetune.seed);
    c.validate()?;
    let mut ds = load_dataset(env, &a.dataset)?;
    let pre = a.init.as_ref().map(|p| checkpoint::load(&env.path(p))).transpose()?;
    ds.assign_annotated(fraction, env.seed())?;
    let labeled = ds.labeled_train()?;
    let c = &env.config;
    let out = finetune(backbone, &c.nets, pre.as_ref(), &labeled.rows, &labeled.labels, &c.finetune)?;
    checkpoint::save(&out.store, &env.path(&a.out))?;
    if let Some(p) = &a.dataset_out {
        write_dataset(&env.path(p), &ds)?;
    }
    Ok(())
}

fn cmd_evaluate(env: &mut Env, a: EvaluateArgs) -> Result<()> {
    env.config.validate()?;
    let backbone: Backbone = a.backbone.parse()?;
    let mut ds = load_dataset(env, &a.dataset)?;
    let source = match &a.reference {
        Some(p) => {
            read_reference_csv(&env.path(p), &mut ds)?;
            LabelSource::Truth
        }
        None => LabelSource::Annotation,
    };
    let saved = checkpoint::load(&env.path(&a.model))?;
    let (classifier, store) = load_classifier(backbone, &env.config.nets, &saved)?;
    let eval = ds.eval_set(source)?;
    let m = evaluate(&classifier, &store, &eval.rows, &eval.labels)?;
    let text = format!(
        "tp,fp,fn,tn,acc,pre,rec,f1\n{},{},{},{},{},{},{},{}\n",
        m.tp,
        m.fp,
        m.fn_,
        m.tn,
        fmt_f64(m.accuracy),
        fmt_f64(m.precision),
        fmt_f64(m.recall),
        fmt_f64(m.f1)
    );
    let out = env.path(&a.out);
    std::fs::write(&out, text).map_err(|e| Error::io(&out, e))
}

fn cmd_grid(env: &mut Env, a: GridArgs) -> Result<()> {
    let c = &mut env.config;
    if let Some(b) = a.backbones {
        c.grid.backbones = b;
    }
    if let Some(p) = a.paradigms {
        c.grid.paradigms = p;
    }
    if let Some(f) = a.fractions {
        c.grid.fractions = f;
    }
    if let Some(s) = a.seeds {
        c.grid.seeds = s;
    }
    if let Some(l) = a.lambda {
        c.loss.lambda = l;
    }
    if let Some(t) = a.tau {
        c.loss.tau = t;
    }
    if let Some(e) = a.pretrain_epochs {
        c.pretrain.epochs = e;
    }
    if let Some(e) = a.finetune_epochs {
        c.finetune.epochs = e;
    }
    c.validate()?;
    let grid = c.grid_config()?;
    let mut ds = load_dataset(env, &a.dataset)?;
    let reference = env.path(&a.reference);
    let grid = if reference.exists() {
        read_reference_csv(&reference, &mut ds)?;
        grid
    } else {
        GridConfig {
            label_source: LabelSource::Annotation,
            ..grid
        }
    };
    let out = run_grid(&mut ds, &grid)?;
    write_results_csv(&env.path(&a.out), &out.rows)?;
    let entries: Vec<ResultEntry> = out.rows.iter().map(ResultEntry::from).collect();
    let summary = env.path(&a.summary);
    std::fs::write(&summary, summary_csv(&summarize(&entries))).map_err(|e| Error::io(&summary, e))?;
    if !out.logs.is_empty() {
        let dir = env.path(&a.loss_dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for l in &out.logs {
            let name = format!("loss_{}_{}_{}_seed{}.csv", l.backbone, l.arm.paradigm(), l.arm.loss_kind(), l.seed);
            write_loss_log(&dir.join(name), &l.log)?;
        }
    }
    Ok(())
}

/// Batch-wise curve CSV: `source,paradigm,loss_kind,step,epoch,loss`.
pub fn batch_curves_csv(logs: &[(String, Vec<LossRecord>)]) -> String {
    let mut out = String::from("source,paradigm,loss_kind,step,epoch,loss\n");
    for (src, log) in logs {
        for (step, r) in log.iter().enumerate() {
            out.push_str(&format!(
                "{src},{},{},{step},{},{}\n",
                r.paradigm,
                r.loss_kind,
                r.epoch,
                fmt_f64(r.loss)
            ));
        }
    }
    out
}

/// Epoch-wise curve CSV: `source,paradigm,loss_kind,epoch,mean,std` (population std over batches).
pub fn epoch_curves_csv(logs: &[(String, Vec<LossRecord>)]) -> String {
    let mut out = String::from("source,paradigm,loss_kind,epoch,mean,std\n");
    for (src, log) in logs {
        let means = epoch_means(log);
        for (epoch, mean) in means {
            let batch: Vec<f64> = log.iter().filter(|r| r.epoch == epoch).map(|r| r.loss).collect();
            let var = batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / batch.len() as f64;
            let (p, k) = log.first().map(|r| (r.paradigm.as_str(), r.loss_kind.as_str())).unwrap_or(("", ""));
            out.push_str(&format!("{src},{p},{k},{epoch},{},{}\n", fmt_f64(mean), fmt_f64(var.sqrt())));
        }
    }
    out
}

/// Per-backbone F1 tables: one row per paradigm, one column per fraction.
pub fn f1_tables(entries: &[ResultEntry]) -> Vec<(String, String)> {
    let summary = summarize(entries);
    let mut backbones: Vec<String> = Vec::new();
    for s in &summary {
        if !backbones.contains(&s.backbone) {
            backbones.push(s.backbone.clone());
        }
    }
    backbones
        .into_iter()
        .map(|b| {
            let rows: Vec<_> = summary.iter().filter(|s| s.backbone == b).collect();
            let mut fractions: Vec<f64> = rows.iter().map(|s| s.fraction).collect();
            fractions.sort_by(f64::total_cmp);
            fractions.dedup();
            let mut arms: Vec<(String, String)> = Vec::new();
            for s in &rows {
                let key = (s.paradigm.clone(), s.loss_kind.clone());
                if !arms.contains(&key) {
                    arms.push(key);
                }
            }
            let mut text = String::from("paradigm,loss_kind");
            for f in &fractions {
                text.push_str(&format!(",f1@{}", (f * 1000.0).round() / 10.0));
            }
            text.push('\n');
            for (p, k) in arms {
                text.push_str(&format!("{p},{k}"));
                for f in &fractions {
                    let v = rows
                        .iter()
                        .find(|s| s.paradigm == p && s.loss_kind == k && s.fraction == *f)
                        .map(|s| fmt_f64(s.f1))
                        .unwrap_or_default();
                    text.push_str(&format!(",{v}"));
                }
                text.push('\n');
            }
            (b, text)
        })
        .collect()
}

fn cmd_report(env: &Env, a: ReportArgs) -> Result<()> {
    env.config.validate()?;
    let entries = read_results_csv(&env.path(&a.results))?;
    let dir = env.path(&a.out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("summary.csv", summary_csv(&summarize(&entries)))?;
    for (backbone, table) in f1_tables(&entries) {
        write(&format!("f1_{backbone}.csv"), table)?;
    }
    let mut paths: Vec<PathBuf> = a.logs.iter().map(|p| env.path(p)).collect();
    if let Some(d) = &a.loss_dir {
        let d = env.path(d);
        let mut found: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("loss_") && n.ends_with(".csv"))
            })
            .collect();
        found.sort();
        paths.extend(found);
    }
    if !paths.is_empty() {
        let logs = paths
            .iter()
            .map(|p| {
                let src = p.file_stem().and_then(|s| s.to_str()).unwrap_or("log").to_string();
                read_loss_log(p).map(|l| (src, l))
            })
            .collect::<Result<Vec<_>>>()?;
        write("loss_curves_batch.csv", batch_curves_csv(&logs))?;
        write("loss_curves_epoch.csv", epoch_curves_csv(&logs))?;
    }
    Ok(())
}
