use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dropout, check_positive, Ctx, BN_MOMENTUM};
use crate::diffcore::{glorot_normal_shaped, BatchNormMode, ParamId, ParamStore, Tensor, Var};
use crate::dsp::PULSE_LEN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcnnConfig {
    pub n_blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FcnnConfig {
    fn default() -> Self {
        Self {
            n_blocks: 3,
            filters: 64,
            kernel: 7,
            dropout: 0.25,
            learning_rate: 1e-4,
            batch_size: 96,
        }
    }
}

impl FcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || PULSE_LEN >> self.n_blocks == 0 {
            return Err(Error::config("fcnn.n_blocks", "must be in 1..=8"));
        }
        if self.filters == 0 {
            return Err(Error::config("fcnn.filters", "must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("fcnn.kernel", "must be odd"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("fcnn.batch_size", "must be positive"));
        }
        check_dropout("fcnn.dropout", self.dropout)?;
        check_positive("fcnn.learning_rate", self.learning_rate)
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

/// Conv -> batch norm -> relu -> max-pool blocks with global average pooling.
#[derive(Debug, Clone)]
pub struct Fcnn {
    cfg: FcnnConfig,
    blocks: Vec<ConvBlock>,
}

impl Fcnn {
    pub fn build(cfg: &FcnnConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (f, k) = (cfg.filters, cfg.kernel);
        let mut cin = 1;
        let mut blocks = Vec::new();
        for i in 0..cfg.n_blocks {
            let p = format!("{prefix}block{i}");
            blocks.push(ConvBlock {
                w: store.add(format!("{p}.conv.w"), glorot_normal_shaped(&[f, cin, k], cin * k, f * k, rng)),
                b: store.add(format!("{p}.conv.b"), Tensor::zeros(&[f])),
                gamma: store.add(format!("{p}.bn.gamma"), Tensor::ones(&[f])),
                beta: store.add(format!("{p}.bn.beta"), Tensor::zeros(&[f])),
                running_mean: store.add_buffer(format!("{p}.bn.running_mean"), Tensor::zeros(&[f])),
                running_var: store.add_buffer(format!("{p}.bn.running_var"), Tensor::ones(&[f])),
            });
            cin = f;
        }
        Ok(Self { cfg: cfg.clone(), blocks })
    }

    pub fn d_embed(&self) -> usize {
        self.cfg.filters
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let b = ctx.graph.shape(x)[0];
        let mut h = ctx.graph.reshape(x, &[b, 1, PULSE_LEN])?;
        for blk in &self.blocks {
            let (w, bias) = (ctx.p(blk.w), ctx.p(blk.b));
            h = ctx.graph.conv1d(h, w, bias)?;
            let (g, be) = (ctx.p(blk.gamma), ctx.p(blk.beta));
            if ctx.training {
                let (y, stats) = ctx.graph.batch_norm(h, g, be, BatchNormMode::Train)?;
                let stats = stats.expect("training mode returns statistics");
                for (id, batch) in [(blk.running_mean, &stats.mean), (blk.running_var, &stats.var)] {
                    for (r, s) in ctx.store.get_mut(id).data_mut().iter_mut().zip(batch) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * s;
                    }
                }
                h = y;
            } else {
                let mean = ctx.store.get(blk.running_mean).data().to_vec();
                let var = ctx.store.get(blk.running_var).data().to_vec();
                h = ctx.graph.batch_norm(h, g, be, BatchNormMode::Eval { mean: &mean, var: &var })?.0;
            }
            h = ctx.graph.relu(h)?;
            h = ctx.graph.maxpool1d(h)?;
            h = ctx.dropout(h, self.cfg.dropout)?;
        }
        ctx.graph.mean_axis(h, 2)
    }
}
