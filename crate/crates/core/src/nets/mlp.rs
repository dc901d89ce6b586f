use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dropout, check_positive, Ctx, Linear};
use crate::diffcore::{ParamStore, Var};
use crate::dsp::PULSE_LEN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![500; 3],
            dropout: 0.3,
            learning_rate: 1e-4,
            batch_size: 96,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("mlp.hidden", "needs at least one positive layer width"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("mlp.batch_size", "must be positive"));
        }
        check_dropout("mlp.dropout", self.dropout)?;
        check_positive("mlp.learning_rate", self.learning_rate)
    }
}

/// Dense layers with relu and dropout.
#[derive(Debug, Clone)]
pub struct Mlp {
    cfg: MlpConfig,
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn build(cfg: &MlpConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut fan_in = PULSE_LEN;
        let mut layers = Vec::new();
        for (i, &w) in cfg.hidden.iter().enumerate() {
            layers.push(Linear::build(store, &format!("{prefix}dense{i}"), fan_in, w, rng));
            fan_in = w;
        }
        Ok(Self { cfg: cfg.clone(), layers })
    }

    pub fn d_embed(&self) -> usize {
        *self.cfg.hidden.last().unwrap()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(ctx, x)?;
            x = ctx.graph.relu(x)?;
            x = ctx.dropout(x, self.cfg.dropout)?;
        }
        Ok(x)
    }
}
