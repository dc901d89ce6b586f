use rand_chacha::ChaCha8Rng;

use super::{batch_tensor, BackboneConfigs, Backbone, Ctx, Encoder};
use crate::diffcore::{glorot_normal_init, ParamId, ParamStore, Tensor, Var};
use crate::dsp::PULSE_LEN;
use crate::error::Result;

/// Width of the contrastive projection.
pub const D_PROJ: usize = 32;

/// Dense layer `x W + b` with a Glorot-normal kernel and zero bias.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn build(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot_normal_init(fan_in, fan_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        let y = ctx.graph.matmul(x, w)?;
        ctx.graph.add(y, b)
    }
}

/// `Linear -> relu -> Linear(D_PROJ)` followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl ProjectionHead {
    pub fn build(store: &mut ParamStore, prefix: &str, d_embed: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::build(store, &format!("{prefix}hidden"), d_embed, d_embed, rng),
            out: Linear::build(store, &format!("{prefix}out"), d_embed, D_PROJ, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var) -> Result<Var> {
        let a = self.hidden.forward(ctx, h)?;
        let a = ctx.graph.relu(a)?;
        let z = self.out.forward(ctx, a)?;
        Self::normalize(ctx, z)
    }

    /// Row-wise unit-norm projection; zero rows are a numerics error.
    pub fn normalize(ctx: &mut Ctx<'_>, z: Var) -> Result<Var> {
        ctx.graph.l2_normalize(z)
    }
}

/// `Linear(256) -> relu -> Linear(256)` reconstruction of the input pulse.
#[derive(Debug, Clone)]
pub struct ReconstructionDecoder {
    pub hidden: Linear,
    pub out: Linear,
}

impl ReconstructionDecoder {
    pub fn build(store: &mut ParamStore, prefix: &str, d_embed: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::build(store, &format!("{prefix}hidden"), d_embed, PULSE_LEN, rng),
            out: Linear::build(store, &format!("{prefix}out"), PULSE_LEN, PULSE_LEN, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var) -> Result<Var> {
        let a = self.hidden.forward(ctx, h)?;
        let a = ctx.graph.relu(a)?;
        self.out.forward(ctx, a)
    }
}

/// `Linear -> gelu -> Linear(K)` producing DINO logits.
#[derive(Debug, Clone)]
pub struct DinoHead {
    pub hidden: Linear,
    pub out: Linear,
    pub k: usize,
}

impl DinoHead {
    pub fn build(store: &mut ParamStore, prefix: &str, d_embed: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::build(store, &format!("{prefix}hidden"), d_embed, d_embed, rng),
            out: Linear::build(store, &format!("{prefix}out"), d_embed, k, rng),
            k,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var) -> Result<Var> {
        let a = self.hidden.forward(ctx, h)?;
        let a = ctx.graph.gelu(a)?;
        self.out.forward(ctx, a)
    }
}

/// Encoder with a single dense two-class head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: Linear,
}

impl Classifier {
    pub fn build(backbone: Backbone, cfg: &BackboneConfigs, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = Encoder::build(backbone, cfg, store, rng)?;
        let head = Linear::build(store, "head", encoder.d_embed(), 2, rng);
        Ok(Self { encoder, head })
    }

    pub fn logits(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.encoder.forward(ctx, x)?;
        self.head.forward(ctx, h)
    }

    /// Eval-mode class probabilities `[N, 2]`, computed in chunks.
    pub fn predict_proba<P: AsRef<[f64]>>(&self, store: &ParamStore, rows: &[P], chunk: usize) -> Result<Tensor> {
        use rand::SeedableRng;
        let mut scratch = store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(rows.len() * 2);
        for part in rows.chunks(chunk.max(1)) {
            let mut ctx = Ctx::new(&mut scratch, false, &mut rng).freeze("");
            let x = ctx.constant(batch_tensor(part)?);
            let z = self.logits(&mut ctx, x)?;
            let p = ctx.graph.softmax(z)?;
            out.extend_from_slice(ctx.graph.value(p).data());
        }
        Tensor::new(&[rows.len(), 2], out)
    }
}
