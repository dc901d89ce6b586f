use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dropout, check_positive, Ctx, Linear};
use crate::diffcore::{ParamId, ParamStore, Tensor, Var};
use crate::dsp::PULSE_LEN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub input_length: usize,
    pub patch_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            dropout: 0.25,
            learning_rate: 6e-4,
            batch_size: 96,
            input_length: PULSE_LEN,
            patch_len: 16,
        }
    }
}

impl TransformerConfig {
    /// A small model for unit tests.
    pub fn tiny() -> Self {
        Self {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            ..Self::default()
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.input_length / self.patch_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("transformer.n_layers", "must be positive"));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(
                "transformer.d_model",
                format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads),
            ));
        }
        if self.d_ff == 0 {
            return Err(Error::config("transformer.d_ff", "must be positive"));
        }
        if self.input_length != PULSE_LEN {
            return Err(Error::config("transformer.input_length", format!("must be {PULSE_LEN}")));
        }
        if self.patch_len == 0 || self.input_length % self.patch_len != 0 {
            return Err(Error::config("transformer.patch_len", "must divide input_length"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("transformer.batch_size", "must be positive"));
        }
        check_dropout("transformer.dropout", self.dropout)?;
        check_positive("transformer.learning_rate", self.learning_rate)
    }
}

/// Fixed sinusoidal position table `[n_tokens, d_model]`.
pub fn sinusoidal_positions(n_tokens: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; n_tokens * d_model];
    for t in 0..n_tokens {
        for i in 0..d_model {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d_model as f64);
            let a = t as f64 * rate;
            data[t * d_model + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(&[n_tokens, d_model], data).expect("shape matches count")
}

#[derive(Debug, Clone)]
struct Layer {
    ln1: (ParamId, ParamId),
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

/// Patch-embedding Transformer encoder with pre-norm residual blocks and mean pooling.
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: TransformerConfig,
    embed: Linear,
    layers: Vec<Layer>,
    ln_final: (ParamId, ParamId),
    positions: Tensor,
}

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gamma"), Tensor::ones(&[d])),
        store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
    )
}

impl Transformer {
    pub fn build(cfg: &TransformerConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let embed = Linear::build(store, &format!("{prefix}embed"), cfg.patch_len, d, rng);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("{prefix}layer{i}");
            layers.push(Layer {
                ln1: layer_norm_params(store, &format!("{p}.ln1"), d),
                q: Linear::build(store, &format!("{p}.attn.q"), d, d, rng),
                k: Linear::build(store, &format!("{p}.attn.k"), d, d, rng),
                v: Linear::build(store, &format!("{p}.attn.v"), d, d, rng),
                o: Linear::build(store, &format!("{p}.attn.o"), d, d, rng),
                ln2: layer_norm_params(store, &format!("{p}.ln2"), d),
                ff1: Linear::build(store, &format!("{p}.ff1"), d, cfg.d_ff, rng),
                ff2: Linear::build(store, &format!("{p}.ff2"), cfg.d_ff, d, rng),
            });
        }
        let ln_final = layer_norm_params(store, &format!("{prefix}ln_final"), d);
        Ok(Self {
            positions: sinusoidal_positions(cfg.n_tokens(), d),
            cfg: cfg.clone(),
            embed,
            layers,
            ln_final,
        })
    }

    pub fn d_embed(&self) -> usize {
        self.cfg.d_model
    }

    fn norm(ctx: &mut Ctx<'_>, x: Var, p: (ParamId, ParamId)) -> Result<Var> {
        let (g, b) = (ctx.p(p.0), ctx.p(p.1));
        ctx.graph.layer_norm(x, g, b)
    }

    fn attention(&self, ctx: &mut Ctx<'_>, layer: &Layer, x: Var) -> Result<Var> {
        let (b, t, d) = (ctx.graph.shape(x)[0], self.cfg.n_tokens(), self.cfg.d_model);
        let h = self.cfg.n_heads;
        let dh = d / h;
        let split = |ctx: &mut Ctx<'_>, v: Var| -> Result<Var> {
            let v = ctx.graph.reshape(v, &[b, t, h, dh])?;
            let v = ctx.graph.permute(v, &[0, 2, 1, 3])?;
            ctx.graph.reshape(v, &[b * h, t, dh])
        };
        let q = layer.q.forward(ctx, x)?;
        let q = split(ctx, q)?;
        let k = layer.k.forward(ctx, x)?;
        let k = split(ctx, k)?;
        let v = layer.v.forward(ctx, x)?;
        let v = split(ctx, v)?;
        let scores = ctx.graph.bmm(q, k, true)?;
        let scores = ctx.graph.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = ctx.graph.softmax(scores)?;
        ctx.attention.push(probs);
        let mixed = ctx.graph.bmm(probs, v, false)?;
        let mixed = ctx.graph.reshape(mixed, &[b, h, t, dh])?;
        let mixed = ctx.graph.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = ctx.graph.reshape(mixed, &[b, t, d])?;
        layer.o.forward(ctx, mixed)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let b = ctx.graph.shape(x)[0];
        let (t, rate) = (self.cfg.n_tokens(), self.cfg.dropout);
        let patches = ctx.graph.reshape(x, &[b, t, self.cfg.patch_len])?;
        let mut h = self.embed.forward(ctx, patches)?;
        let pos = ctx.constant(self.positions.clone());
        h = ctx.graph.add(h, pos)?;
        h = ctx.dropout(h, rate)?;
        for layer in &self.layers {
            let n = Self::norm(ctx, h, layer.ln1)?;
            let a = self.attention(ctx, layer, n)?;
            let a = ctx.dropout(a, rate)?;
            h = ctx.graph.add(h, a)?;
            let n = Self::norm(ctx, h, layer.ln2)?;
            let f = layer.ff1.forward(ctx, n)?;
            let f = ctx.graph.gelu(f)?;
            let f = ctx.dropout(f, rate)?;
            let f = layer.ff2.forward(ctx, f)?;
            let f = ctx.dropout(f, rate)?;
            h = ctx.graph.add(h, f)?;
        }
        h = Self::norm(ctx, h, self.ln_final)?;
        ctx.graph.mean_axis(h, 1)
    }
}
