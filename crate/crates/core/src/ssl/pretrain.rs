use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_views, AugmentSpec};
use super::dino::{dino_step, DinoConfig, DinoModel, DinoState};
use super::loss::{batch_contrastive_loss, LossParams};
use super::mask::mask_rows;
use crate::diffcore::{Adam, AdamConfig, ParamStore};
use crate::error::{Error, Result};
use crate::nets::{batch_tensor, Backbone, BackboneConfigs, Ctx, DinoHead, Encoder, ProjectionHead, ReconstructionDecoder};
use crate::synthgen::fmt_f64;

/// Default masked-span length in samples.
pub const DEFAULT_MASK_SIZE: usize = 64;
pub const DECODER_PREFIX: &str = "decoder.";
pub const PROJECTOR_PREFIX: &str = "projector.";
pub const DINO_HEAD_PREFIX: &str = "dino_head.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Masking,
    Contrastive,
    Dino,
    Autoencoder,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Masking => "masking",
            Method::Contrastive => "contrastive",
            Method::Dino => "dino",
            Method::Autoencoder => "autoencoder",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "masking" | "masked" | "mask" => Ok(Method::Masking),
            "contrastive" => Ok(Method::Contrastive),
            "dino" => Ok(Method::Dino),
            "autoencoder" | "ae" => Ok(Method::Autoencoder),
            _ => Err(Error::config(
                "method",
                format!("unknown method `{s}` (expected masking, contrastive, dino or autoencoder)"),
            )),
        }
    }
}

/// Optimization budget. `None` fields take the backbone defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: None,
            learning_rate: None,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    fn resolve(&self, backbone: Backbone, cfgs: &BackboneConfigs) -> Result<(usize, f64)> {
        let bs = self.batch_size.unwrap_or_else(|| cfgs.batch_size(backbone));
        let lr = self.learning_rate.unwrap_or_else(|| cfgs.learning_rate(backbone));
        if bs == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("learning_rate", format!("must be positive, got {lr}")));
        }
        Ok((bs, lr))
    }
}

/// One optimizer step's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub paradigm: String,
    pub loss_kind: String,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

pub const LOSS_LOG_HEADER: &str = "paradigm,loss_kind,epoch,batch,loss";

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&format!("{},{},{},{},{}\n", r.paradigm, r.loss_kind, r.epoch, r.batch, fmt_f64(r.loss)));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LOSS_LOG_HEADER) {
        return Err(Error::format(path, format!("expected header `{LOSS_LOG_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        out.push(LossRecord {
            paradigm: f[0].to_string(),
            loss_kind: f[1].to_string(),
            epoch: f[2].parse().map_err(|_| bad("bad epoch"))?,
            batch: f[3].parse().map_err(|_| bad("bad batch"))?,
            loss: f[4].parse().map_err(|_| bad("bad loss"))?,
        });
    }
    Ok(out)
}

/// Mean loss per epoch, in epoch order.
pub fn epoch_means(log: &[LossRecord]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in log {
        match out.last_mut() {
            Some((e, s, n)) if *e == r.epoch => {
                *s += r.loss;
                *n += 1;
            }
            _ => out.push((r.epoch, r.loss, 1)),
        }
    }
    out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
}

/// Trained parameters (encoder under `encoder.` plus the pretext head) and the loss log.
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub log: Vec<LossRecord>,
}

fn check_rows<P: AsRef<[f64]>>(rows: &[P], min: usize) -> Result<()> {
    if rows.len() < min {
        return Err(Error::Data(format!(
            "pretraining needs at least {min} pulses, got {}",
            rows.len()
        )));
    }
    Ok(())
}

fn shuffled_batches(n: usize, bs: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(bs).map(<[usize]>::to_vec).collect()
}

/// Reconstruct each row from a copy with one random span of `mask_size` zeroed.
pub fn pretrain_masked<P: AsRef<[f64]>>(
    backbone: Backbone,
    cfgs: &BackboneConfigs,
    rows: &[P],
    mask_size: usize,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    reconstruct(backbone, cfgs, rows, mask_size, cfg, Method::Masking)
}

/// Plain reconstruction: [`pretrain_masked`] with an empty mask.
pub fn pretrain_autoencoder<P: AsRef<[f64]>>(
    backbone: Backbone,
    cfgs: &BackboneConfigs,
    rows: &[P],
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    reconstruct(backbone, cfgs, rows, 0, cfg, Method::Autoencoder)
}

fn reconstruct<P: AsRef<[f64]>>(
    backbone: Backbone,
    cfgs: &BackboneConfigs,
    rows: &[P],
    mask_size: usize,
    cfg: &PretrainConfig,
    method: Method,
) -> Result<PretrainOutput> {
    cfgs.validate()?;
    check_rows(rows, 1)?;
    let (bs, lr) = cfg.resolve(backbone, cfgs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let encoder = Encoder::build(backbone, cfgs, &mut store, &mut rng)?;
    let decoder = ReconstructionDecoder::build(&mut store, DECODER_PREFIX, encoder.d_embed(), &mut rng);
    let mut adam = Adam::all(AdamConfig::with_lr(lr), &store);
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        for (bi, idx) in shuffled_batches(rows.len(), bs, &mut rng).into_iter().enumerate() {
            let batch: Vec<&[f64]> = idx.iter().map(|i| rows[*i].as_ref()).collect();
            let (masked, _) = mask_rows(&batch, mask_size, &mut rng)?;
            let (x, target) = (batch_tensor(&masked)?, batch_tensor(&batch)?);
            let mut ctx = Ctx::new(&mut store, true, &mut rng);
            let x = ctx.constant(x);
            let t = ctx.constant(target);
            let h = encoder.forward(&mut ctx, x)?;
            let y = decoder.forward(&mut ctx, h)?;
            let loss = ctx.graph.mse_loss(y, t)?;
            let value = ctx.graph.value(loss).item();
            let grads = ctx.graph.backward(loss)?;
            drop(ctx);
            adam.step(&mut store, &grads);
            log.push(LossRecord {
                paradigm: method.to_string(),
                loss_kind: "mse".to_string(),
                epoch,
                batch: bi,
                loss: value,
            });
        }
    }
    Ok(PretrainOutput { store, encoder, log })
}

/// Pull sibling views together through a projection head under `params`.
pub fn pretrain_contrastive<P: AsRef<[f64]>>(
    backbone: Backbone,
    cfgs: &BackboneConfigs,
    rows: &[P],
    params: &LossParams,
    spec: &AugmentSpec,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    cfgs.validate()?;
    params.validate()?;
    spec.validate()?;
    check_rows(rows, 2)?;
    let (bs, lr) = cfg.resolve(backbone, cfgs)?;
    if bs < 2 {
        return Err(Error::Data("contrastive batch size must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let encoder = Encoder::build(backbone, cfgs, &mut store, &mut rng)?;
    let head = ProjectionHead::build(&mut store, PROJECTOR_PREFIX, encoder.d_embed(), &mut rng);
    let mut adam = Adam::all(AdamConfig::with_lr(lr), &store);
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let batches = shuffled_batches(rows.len(), bs, &mut rng);
        for (bi, idx) in batches.into_iter().enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let b = idx.len();
            let mut views_a = Vec::with_capacity(b);
            let mut views_b = Vec::with_capacity(b);
            for i in &idx {
                let (va, vb) = augment_views(rows[*i].as_ref(), spec, &mut rng)?;
                views_a.push(va);
                views_b.push(vb);
            }
            views_a.append(&mut views_b);
            let x = batch_tensor(&views_a)?;
            let mut ctx = Ctx::new(&mut store, true, &mut rng);
            let x = ctx.constant(x);
            let h = encoder.forward(&mut ctx, x)?;
            let z = head.forward(&mut ctx, h)?;
            let za = ctx.graph.slice(z, 0, 0, b)?;
            let zb = ctx.graph.slice(z, 0, b, 2 * b)?;
            let loss = batch_contrastive_loss(&mut ctx.graph, params, za, zb)?;
            let value = ctx.graph.value(loss).item();
            let grads = ctx.graph.backward(loss)?;
            drop(ctx);
            adam.step(&mut store, &grads);
            log.push(LossRecord {
                paradigm: Method::Contrastive.to_string(),
                loss_kind: params.kind.to_string(),
                epoch,
                batch: bi,
                loss: value,
            });
        }
    }
    Ok(PretrainOutput { store, encoder, log })
}

/// Self-distillation against an EMA teacher.
pub fn pretrain_dino<P: AsRef<[f64]>>(
    backbone: Backbone,
    cfgs: &BackboneConfigs,
    rows: &[P],
    dino: &DinoConfig,
    spec: &AugmentSpec,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    cfgs.validate()?;
    dino.validate()?;
    spec.validate()?;
    check_rows(rows, 1)?;
    let (bs, lr) = cfg.resolve(backbone, cfgs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let encoder = Encoder::build(backbone, cfgs, &mut store, &mut rng)?;
    let head = DinoHead::build(&mut store, DINO_HEAD_PREFIX, encoder.d_embed(), dino.k, &mut rng);
    let model = DinoModel { encoder, head };
    let mut state = DinoState::new(*dino, &store);
    let mut adam = Adam::all(AdamConfig::with_lr(lr), &store);
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        for (bi, idx) in shuffled_batches(rows.len(), bs, &mut rng).into_iter().enumerate() {
            let mut v1 = Vec::with_capacity(idx.len());
            let mut v2 = Vec::with_capacity(idx.len());
            for i in &idx {
                let (a, b) = augment_views(rows[*i].as_ref(), spec, &mut rng)?;
                v1.push(a);
                v2.push(b);
            }
            let loss = dino_step(&mut state, &model, &mut store, &mut adam, &v1, &v2, &mut rng)?;
            log.push(LossRecord {
                paradigm: Method::Dino.to_string(),
                loss_kind: "dino".to_string(),
                epoch,
                batch: bi,
                loss,
            });
        }
    }
    Ok(PretrainOutput {
        store,
        encoder: model.encoder,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{FcnnConfig, MlpConfig, TransformerConfig};
    use crate::ssl::LossKind;

    fn small_cfgs() -> BackboneConfigs {
        BackboneConfigs {
            mlp: MlpConfig {
                hidden: vec![32, 16],
                learning_rate: 1e-3,
                batch_size: 16,
                ..MlpConfig::default()
            },
            fcnn: FcnnConfig {
                n_blocks: 2,
                filters: 8,
                batch_size: 16,
                learning_rate: 1e-3,
                ..FcnnConfig::default()
            },
            transformer: TransformerConfig {
                batch_size: 16,
                ..TransformerConfig::tiny()
            },
        }
    }

    fn rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let s = crate::diffcore::seeded_tensor(&[256], seed + i as u64, 0.2);
                let raw: Vec<f64> = (0..256)
                    .map(|t| (t as f64 * std::f64::consts::PI / 128.0).sin() + s.data()[t])
                    .collect();
                crate::dsp::normalize(&raw).unwrap()
            })
            .collect()
    }

    fn cfg(epochs: usize) -> PretrainConfig {
        PretrainConfig {
            epochs,
            seed: 7,
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn autoencoder_is_masking_with_empty_mask() {
        let data = rows(20, 1);
        let a = pretrain_autoencoder(Backbone::Mlp, &small_cfgs(), &data, &cfg(2)).unwrap();
        let m = pretrain_masked(Backbone::Mlp, &small_cfgs(), &data, 0, &cfg(2)).unwrap();
        assert_eq!(crate::diffcore::checkpoint::encode(&a.store), crate::diffcore::checkpoint::encode(&m.store));
        let la: Vec<f64> = a.log.iter().map(|r| r.loss).collect();
        let lm: Vec<f64> = m.log.iter().map(|r| r.loss).collect();
        assert_eq!(la, lm);
        assert!(la.iter().all(|l| *l >= 0.0));
    }

    #[test]
    fn empty_dataset_is_data_error() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(
            pretrain_masked(Backbone::Mlp, &small_cfgs(), &empty, 64, &cfg(1)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            pretrain_contrastive(
                Backbone::Mlp,
                &small_cfgs(),
                &rows(1, 0),
                &LossParams::default(),
                &AugmentSpec::default(),
                &cfg(1)
            ),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn masked_loss_decreases_for_each_seed() {
        let data = rows(48, 2);
        for seed in 0..3 {
            let c = PretrainConfig {
                epochs: 12,
                seed,
                ..PretrainConfig::default()
            };
            let out = pretrain_masked(Backbone::Mlp, &small_cfgs(), &data, DEFAULT_MASK_SIZE, &c).unwrap();
            let means = epoch_means(&out.log);
            assert!(means.last().unwrap().1 < means[0].1, "seed {seed}: {means:?}");
        }
    }

    #[test]
    fn contrastive_runs_for_every_loss_and_backbone() {
        let data = rows(24, 3);
        for b in Backbone::ALL {
            for kind in LossKind::ALL {
                let p = LossParams::new(kind, 0.1, 0.75);
                let out = pretrain_contrastive(b, &small_cfgs(), &data, &p, &AugmentSpec::default(), &cfg(1)).unwrap();
                assert_eq!(out.log.len(), 2);
                assert!(out.log.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
                assert_eq!(out.log[0].loss_kind, kind.as_str());
            }
        }
    }

    #[test]
    fn dino_runs() {
        let out = pretrain_dino(
            Backbone::Fcnn,
            &small_cfgs(),
            &rows(20, 4),
            &DinoConfig::default(),
            &AugmentSpec::default(),
            &cfg(1),
        )
        .unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.log.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn loss_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let log = vec![
            LossRecord {
                paradigm: "contrastive".into(),
                loss_kind: "info_nce".into(),
                epoch: 0,
                batch: 0,
                loss: 0.1 + 0.2,
            },
            LossRecord {
                paradigm: "contrastive".into(),
                loss_kind: "info_nce".into(),
                epoch: 1,
                batch: 0,
                loss: 1.0 / 3.0,
            },
        ];
        write_loss_log(&path, &log).unwrap();
        assert_eq!(read_loss_log(&path).unwrap(), log);
        assert_eq!(epoch_means(&log), vec![(0, 0.1 + 0.2), (1, 1.0 / 3.0)]);
    }
}
