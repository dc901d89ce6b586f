use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adasyn::{balance, AdasynConfig};
use super::metrics::MetricsReport;
use crate::diffcore::{Adam, AdamConfig, ParamStore};
use crate::dsp::Label;
use crate::error::{Error, Result};
use crate::nets::{batch_tensor, Backbone, BackboneConfigs, Classifier, Ctx, ENCODER_PREFIX};

/// Eval-time batch size; does not affect results.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Stop after this many epochs without a lower mean training loss; 0 disables.
    pub patience: usize,
    pub freeze_encoder: bool,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    /// `None` trains on the labeled subset as is.
    pub adasyn: Option<AdasynConfig>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            patience: 10,
            freeze_encoder: false,
            batch_size: None,
            learning_rate: None,
            adasyn: Some(AdasynConfig::default()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub classifier: Classifier,
    pub store: ParamStore,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Number of ADASYN samples added.
    pub n_synthetic: usize,
}

/// Train a classifier on `rows`, starting the encoder from `pretrained` when given.
pub fn finetune(
    backbone: Backbone,
    cfgs: &BackboneConfigs,
    pretrained: Option<&ParamStore>,
    rows: &[Vec<f64>],
    labels: &[Label],
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutput> {
    cfgs.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::shape("finetune", &[rows.len()], &[labels.len()]));
    }
    let n_art = labels.iter().filter(|l| l.is_artifact()).count();
    if n_art == 0 || n_art == labels.len() {
        return Err(Error::Data(format!(
            "labeled subset of {} pulses has a single class",
            labels.len()
        )));
    }
    let bs = cfg.batch_size.unwrap_or_else(|| cfgs.batch_size(backbone));
    let lr = cfg.learning_rate.unwrap_or_else(|| cfgs.learning_rate(backbone));
    if bs == 0 || !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config("finetune", "batch size and learning rate must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let classifier = Classifier::build(backbone, cfgs, &mut store, &mut rng)?;
    if let Some(p) = pretrained {
        store.copy_matching(p, ENCODER_PREFIX)?;
    }

    let mut rows = rows.to_vec();
    let mut labels = labels.to_vec();
    let n_synthetic = match &cfg.adasyn {
        Some(a) => balance(&mut rows, &mut labels, a, &mut rng)?,
        None => 0,
    };

    let ids = if cfg.freeze_encoder {
        store
            .trainable_ids()
            .into_iter()
            .filter(|id| !store.name(*id).starts_with(ENCODER_PREFIX))
            .collect()
    } else {
        store.trainable_ids()
    };
    let mut adam = Adam::new(AdamConfig::with_lr(lr), &store, ids);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let (mut best, mut stale) = (f64::INFINITY, 0usize);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in order.chunks(bs) {
            let batch: Vec<&[f64]> = idx.iter().map(|i| rows[*i].as_slice()).collect();
            let targets: Vec<usize> = idx.iter().map(|i| labels[*i].class_index()).collect();
            let x = batch_tensor(&batch)?;
            let mut ctx = Ctx::new(&mut store, true, &mut rng);
            if cfg.freeze_encoder {
                ctx = ctx.freeze(ENCODER_PREFIX);
            }
            let xv = ctx.constant(x);
            let logits = classifier.logits(&mut ctx, xv)?;
            let loss = ctx.graph.cross_entropy_loss(logits, &targets)?;
            let value = ctx.graph.value(loss).item();
            let grads = ctx.graph.backward(loss)?;
            drop(ctx);
            adam.step(&mut store, &grads);
            sum += value * idx.len() as f64;
            count += idx.len();
        }
        let mean = sum / count as f64;
        epoch_losses.push(mean);
        if mean < best {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(FinetuneOutput {
        classifier,
        store,
        epoch_losses,
        n_synthetic,
    })
}

/// Rebuild a classifier from a saved checkpoint; every entry must be present.
pub fn load_classifier(backbone: Backbone, cfgs: &BackboneConfigs, saved: &ParamStore) -> Result<(Classifier, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let classifier = Classifier::build(backbone, cfgs, &mut store, &mut rng)?;
    let copied = store.copy_matching(saved, "")?;
    if copied != store.len() {
        return Err(Error::Data(format!(
            "checkpoint holds {copied} of the {} {backbone} classifier entries",
            store.len()
        )));
    }
    Ok((classifier, store))
}

/// Argmax class per row.
pub fn predict(classifier: &Classifier, store: &ParamStore, rows: &[Vec<f64>]) -> Result<Vec<Label>> {
    let p = classifier.predict_proba(store, rows, EVAL_CHUNK)?;
    Ok(p
        .data()
        .chunks(2)
        .map(|r| Label::from_class_index(usize::from(r[1] > r[0])))
        .collect())
}

pub fn evaluate(classifier: &Classifier, store: &ParamStore, rows: &[Vec<f64>], labels: &[Label]) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let pred = predict(classifier, store, rows)?;
    MetricsReport::from_predictions(&pred, labels)
}
