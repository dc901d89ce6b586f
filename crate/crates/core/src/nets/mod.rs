//! Encoders (MLP, FCNN, Transformer) and the heads used for pretraining and
//! fine-tuning.

mod fcnn;
mod heads;
mod mlp;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fcnn::{Fcnn, FcnnConfig};
pub use heads::{Classifier, DinoHead, Linear, ProjectionHead, ReconstructionDecoder, D_PROJ};
pub use mlp::{Mlp, MlpConfig};
pub use transformer::{sinusoidal_positions, Transformer, TransformerConfig};

use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::dsp::PULSE_LEN;
use crate::error::{Error, Result};

/// Momentum of batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.99;

/// Name prefix of every encoder parameter.
pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Mlp,
    Fcnn,
    Transformer,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Mlp, Backbone::Fcnn, Backbone::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Mlp => "mlp",
            Backbone::Fcnn => "fcnn",
            Backbone::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Backbone::Mlp),
            "fcnn" => Ok(Backbone::Fcnn),
            "transformer" => Ok(Backbone::Transformer),
            other => Err(Error::config(
                "backbone",
                format!("unknown backbone `{other}` (expected mlp, fcnn or transformer)"),
            )),
        }
    }
}

/// Architecture settings of all three backbones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfigs {
    pub mlp: MlpConfig,
    pub fcnn: FcnnConfig,
    pub transformer: TransformerConfig,
}

impl BackboneConfigs {
    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        self.fcnn.validate()?;
        self.transformer.validate()
    }

    pub fn learning_rate(&self, b: Backbone) -> f64 {
        match b {
            Backbone::Mlp => self.mlp.learning_rate,
            Backbone::Fcnn => self.fcnn.learning_rate,
            Backbone::Transformer => self.transformer.learning_rate,
        }
    }

    pub fn batch_size(&self, b: Backbone) -> usize {
        match b {
            Backbone::Mlp => self.mlp.batch_size,
            Backbone::Fcnn => self.fcnn.batch_size,
            Backbone::Transformer => self.transformer.batch_size,
        }
    }
}

pub(crate) fn check_dropout(field: &str, rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(field, format!("dropout must be in [0, 1), got {rate}")));
    }
    Ok(())
}

pub(crate) fn check_positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(field, format!("must be positive, got {v}")));
    }
    Ok(())
}

/// Forward-pass context: the tape, the parameters, the mode and the RNG.
pub struct Ctx<'a> {
    pub graph: Graph,
    pub store: &'a mut ParamStore,
    pub training: bool,
    pub rng: &'a mut ChaCha8Rng,
    frozen_prefix: Option<String>,
    /// Attention probability tensors, one per layer, from the last forward pass.
    pub attention: Vec<Var>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a mut ParamStore, training: bool, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            graph: Graph::new(),
            store,
            training,
            rng,
            frozen_prefix: None,
            attention: Vec::new(),
        }
    }

    /// Parameters whose names start with `prefix` receive no gradient.
    pub fn freeze(mut self, prefix: &str) -> Self {
        self.frozen_prefix = Some(prefix.to_string());
        self
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        let frozen = self
            .frozen_prefix
            .as_deref()
            .is_some_and(|p| self.store.name(id).starts_with(p));
        if frozen {
            self.graph.frozen_param(self.store, id)
        } else {
            self.graph.param(self.store, id)
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        self.graph.dropout(x, rate, self.training, &mut *self.rng)
    }
}

/// A backbone with its parameters registered under [`ENCODER_PREFIX`].
#[derive(Debug, Clone)]
pub enum Encoder {
    Mlp(Mlp),
    Fcnn(Fcnn),
    Transformer(Transformer),
}

impl Encoder {
    pub fn build(backbone: Backbone, cfg: &BackboneConfigs, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match backbone {
            Backbone::Mlp => Encoder::Mlp(Mlp::build(&cfg.mlp, store, ENCODER_PREFIX, rng)?),
            Backbone::Fcnn => Encoder::Fcnn(Fcnn::build(&cfg.fcnn, store, ENCODER_PREFIX, rng)?),
            Backbone::Transformer => {
                Encoder::Transformer(Transformer::build(&cfg.transformer, store, ENCODER_PREFIX, rng)?)
            }
        })
    }

    pub fn backbone(&self) -> Backbone {
        match self {
            Encoder::Mlp(_) => Backbone::Mlp,
            Encoder::Fcnn(_) => Backbone::Fcnn,
            Encoder::Transformer(_) => Backbone::Transformer,
        }
    }

    pub fn d_embed(&self) -> usize {
        match self {
            Encoder::Mlp(m) => m.d_embed(),
            Encoder::Fcnn(f) => f.d_embed(),
            Encoder::Transformer(t) => t.d_embed(),
        }
    }

    /// `x [B, 256] -> [B, d_embed]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x);
        if s.len() != 2 || s[1] != PULSE_LEN {
            return Err(Error::shape("encode", s, &[s.first().copied().unwrap_or(0), PULSE_LEN]));
        }
        match self {
            Encoder::Mlp(m) => m.forward(ctx, x),
            Encoder::Fcnn(f) => f.forward(ctx, x),
            Encoder::Transformer(t) => t.forward(ctx, x),
        }
    }
}

/// Stack rows into a `[rows.len(), 256]` tensor.
pub fn batch_tensor<P: AsRef<[f64]>>(rows: &[P]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * PULSE_LEN);
    for r in rows {
        let r = r.as_ref();
        if r.len() != PULSE_LEN {
            return Err(Error::shape("batch", &[r.len()], &[PULSE_LEN]));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(&[rows.len(), PULSE_LEN], data)
}

/// Eval-mode embeddings of `rows`, computed in chunks of `chunk`.
pub fn encode_eval<P: AsRef<[f64]>>(
    encoder: &Encoder,
    store: &ParamStore,
    rows: &[P],
    chunk: usize,
) -> Result<Tensor> {
    use rand::SeedableRng;
    let d = encoder.d_embed();
    let mut out = Vec::with_capacity(rows.len() * d);
    let mut scratch = store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for part in rows.chunks(chunk.max(1)) {
        let mut ctx = Ctx::new(&mut scratch, false, &mut rng).freeze("");
        let x = ctx.constant(batch_tensor(part)?);
        let z = encoder.forward(&mut ctx, x)?;
        out.extend_from_slice(ctx.graph.value(z).data());
    }
    Tensor::new(&[rows.len(), d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{check_param_gradients, seeded_tensor, FD_STEP, GRAD_ABS_TOL, GRAD_REL_TOL};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_parameter_counts() {
        let cfg = BackboneConfigs::default();
        let count = |b| {
            let mut s = ParamStore::new();
            Encoder::build(b, &cfg, &mut s, &mut rng(0)).unwrap();
            s.num_trainable()
        };
        // 256*500+500 + 2*(500*500+500)
        assert_eq!(count(Backbone::Mlp), 629_500);
        // (7*64+64 + 128) + 2*(64*64*7+64 + 128)
        assert_eq!(count(Backbone::Fcnn), 58_368);
        // embed 16*128+128; per layer 4*(128*128+128) + 2*256 + (128*512+512) + (512*128+128);
        // final norm 256
        assert_eq!(count(Backbone::Transformer), 2_176 + 4 * 198_272 + 256);
    }

    #[test]
    fn encode_shapes_and_eval_determinism() {
        let cfg = BackboneConfigs {
            mlp: MlpConfig { hidden: vec![16, 8], ..Default::default() },
            fcnn: FcnnConfig { filters: 4, ..Default::default() },
            transformer: TransformerConfig::tiny(),
        };
        let x = seeded_tensor(&[3, 256], 5, 1.0);
        for b in Backbone::ALL {
            let mut store = ParamStore::new();
            let enc = Encoder::build(b, &cfg, &mut store, &mut rng(1)).unwrap();
            let out = |seed| {
                let mut s = store.clone();
                let mut r = rng(seed);
                let mut ctx = Ctx::new(&mut s, false, &mut r);
                let xv = ctx.constant(x.clone());
                let z = enc.forward(&mut ctx, xv).unwrap();
                ctx.graph.value(z).clone()
            };
            let (a, c) = (out(2), out(99));
            assert_eq!(a.shape(), &[3, enc.d_embed()]);
            assert_eq!(a, c, "{b}");
        }
    }

    #[test]
    fn wrong_input_length_is_shape_error() {
        let mut store = ParamStore::new();
        let enc = Encoder::build(Backbone::Mlp, &BackboneConfigs::default(), &mut store, &mut rng(0)).unwrap();
        let mut r = rng(0);
        let mut ctx = Ctx::new(&mut store, false, &mut r);
        let x = ctx.constant(Tensor::zeros(&[2, 100]));
        assert!(matches!(enc.forward(&mut ctx, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut store = ParamStore::new();
        let cfg = BackboneConfigs {
            transformer: TransformerConfig::tiny(),
            ..Default::default()
        };
        let enc = Encoder::build(Backbone::Transformer, &cfg, &mut store, &mut rng(3)).unwrap();
        let mut r = rng(0);
        let mut ctx = Ctx::new(&mut store, false, &mut r);
        let x = ctx.constant(seeded_tensor(&[2, 256], 8, 1.5));
        enc.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.attention.len(), cfg.transformer.n_layers);
        for a in &ctx.attention {
            for row in ctx.graph.value(*a).data().chunks(16) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn masked_input_changes_embedding() {
        let mut store = ParamStore::new();
        let cfg = BackboneConfigs {
            transformer: TransformerConfig::tiny(),
            ..Default::default()
        };
        let enc = Encoder::build(Backbone::Transformer, &cfg, &mut store, &mut rng(4)).unwrap();
        let x = seeded_tensor(&[1, 256], 9, 1.0);
        let mut masked = x.clone();
        masked.data_mut()[40..104].iter_mut().for_each(|v| *v = 0.0);
        let e = encode_eval(&enc, &store, &[x.data().to_vec(), masked.data().to_vec()], 8).unwrap();
        assert_ne!(e.row(0), e.row(1));
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut store = ParamStore::new();
        let cfg = BackboneConfigs {
            mlp: MlpConfig { hidden: vec![8], ..Default::default() },
            ..Default::default()
        };
        let clf = Classifier::build(Backbone::Mlp, &cfg, &mut store, &mut rng(0)).unwrap();
        for id in [clf.head.w, clf.head.b] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let rows = vec![seeded_tensor(&[256], 1, 1.0).into_data(); 4];
        let p = clf.predict_proba(&store, &rows, 2).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn classifier_probabilities_are_distributions() {
        let mut store = ParamStore::new();
        let cfg = BackboneConfigs {
            fcnn: FcnnConfig { filters: 3, ..Default::default() },
            ..Default::default()
        };
        let clf = Classifier::build(Backbone::Fcnn, &cfg, &mut store, &mut rng(2)).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|i| seeded_tensor(&[256], i, 2.0).into_data()).collect();
        let p = clf.predict_proba(&store, &rows, 2).unwrap();
        for r in p.data().chunks(2) {
            assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((r[0] + r[1] - 1.0).abs() <= 1e-12);
        }
    }

    fn micro_configs() -> BackboneConfigs {
        BackboneConfigs {
            mlp: MlpConfig { hidden: vec![3], ..Default::default() },
            fcnn: FcnnConfig { n_blocks: 1, filters: 2, kernel: 3, ..Default::default() },
            transformer: TransformerConfig {
                n_layers: 1,
                d_model: 4,
                n_heads: 2,
                d_ff: 8,
                ..TransformerConfig::tiny()
            },
        }
    }

    #[test]
    fn classifier_cross_entropy_gradients() {
        let cfg = micro_configs();
        let x = seeded_tensor(&[3, 256], 7, 1.0);
        let targets = [0, 1, 1];
        for b in Backbone::ALL {
            let mut store = ParamStore::new();
            let clf = Classifier::build(b, &cfg, &mut store, &mut rng(5)).unwrap();
            assert!(store.num_trainable() <= 1000, "{b}: {}", store.num_trainable());
            let r = check_param_gradients(
                &store,
                |s| {
                    let mut s = s.clone();
                    let mut r = rng(11);
                    let mut ctx = Ctx::new(&mut s, true, &mut r);
                    let xv = ctx.constant(x.clone());
                    let logits = clf.logits(&mut ctx, xv)?;
                    let loss = ctx.graph.cross_entropy_loss(logits, &targets)?;
                    Ok((ctx.graph, loss))
                },
                FD_STEP,
            )
            .unwrap();
            assert!(r.passes(GRAD_REL_TOL, GRAD_ABS_TOL), "{b}: {r:?}");
        }
    }

    #[test]
    fn projection_is_unit_and_scale_invariant() {
        let mut store = ParamStore::new();
        let wide_head = ProjectionHead::build(&mut store, "proj.", 16, &mut rng(0));
        let v = seeded_tensor(&[1, 6], 3, 1.0);
        let v2 = v.map(|x| 2.0 * x);
        let mut r = rng(0);
        let mut ctx = Ctx::new(&mut store, false, &mut r);
        let a = ctx.constant(v);
        let b = ctx.constant(v2);
        let za = ProjectionHead::normalize(&mut ctx, a).unwrap();
        let zb = ProjectionHead::normalize(&mut ctx, b).unwrap();
        let n: f64 = ctx.graph.value(za).data().iter().map(|x| x * x).sum();
        assert!((n.sqrt() - 1.0).abs() <= 1e-12);
        assert_eq!(ctx.graph.value(za).data(), ctx.graph.value(zb).data());
        let wide = ctx.constant(seeded_tensor(&[4, 16], 4, 1.0));
        let z = wide_head.forward(&mut ctx, wide).unwrap();
        assert_eq!(ctx.graph.shape(z), &[4, D_PROJ]);
        let zero = ctx.constant(Tensor::zeros(&[1, 6]));
        assert!(matches!(ProjectionHead::normalize(&mut ctx, zero), Err(Error::Numerics(_))));
    }
}
