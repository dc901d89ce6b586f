//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p pssl-core --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{batch_loss, confusion, moments, scalar_loss, unit};
use pssl_core::diffcore::{
    check_gradients, check_param_gradients, seeded_tensor, BatchNormMode, GradCheck, Graph, ParamStore, Tensor, Var,
    FD_STEP, GRAD_ABS_TOL, GRAD_REL_TOL,
};
use pssl_core::dsp::{bandpass_filtfilt, resample_linear, FilterSpec, Label, RawSignal};
use pssl_core::nets::{
    Backbone, BackboneConfigs, Classifier, Ctx, DinoHead, Encoder, FcnnConfig, MlpConfig, ProjectionHead,
    TransformerConfig,
};
use pssl_core::ssl::{
    batch_contrastive_loss, contrastive_loss, dino_loss, mask_rows, teacher_probs, LossKind, LossParams, LossRecord,
};
use pssl_core::synthgen::{generate, SynthConfig};
use pssl_core::trainer::{
    adasyn_budget, adasyn_oversample, adasyn_weights, apportion, balance, build_dataset, median, results_csv,
    run_grid, AdasynConfig, Arm, FinetuneConfig, GridConfig, LabelSource, MetricsReport,
};
use pssl_core::annotate::annotate_signal;
use pssl_core::ssl::PretrainConfig;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
            return unit(&v);
        }
    }
}

fn c1_loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_scalar, mut worst_batch, mut worst_identity) = (0.0f64, 0.0f64, 0.0f64);
    for kind in LossKind::ALL {
        for _ in 0..100 {
            let dim = rng.random_range(2..=8);
            let tau = rng.random_range(0.1..1.0);
            let lambda = rng.random_range(0.0..2.0);
            let a = rand_unit(&mut rng, dim);
            let p = rand_unit(&mut rng, dim);
            let negs: Vec<Vec<f64>> = (0..rng.random_range(0..=7)).map(|_| rand_unit(&mut rng, dim)).collect();
            let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
            let got = contrastive_loss(&LossParams::new(kind, tau, lambda), &a, &p, &refs).map_err(|e| e.to_string())?;
            worst_scalar = worst_scalar.max((got - scalar_loss(kind, tau, lambda, &a, &p, &negs)).abs());

            let b = rng.random_range(2..=8);
            let za: Vec<Vec<f64>> = (0..b).map(|_| rand_unit(&mut rng, dim)).collect();
            let zb: Vec<Vec<f64>> = (0..b).map(|_| rand_unit(&mut rng, dim)).collect();
            let symmetric = rng.random_bool(0.5);
            let params = LossParams { kind, tau, lambda, symmetric };
            let batch = |params: &LossParams| -> Result<f64, String> {
                let mut g = Graph::new();
                let va = g.constant(Tensor::from_rows(&za).map_err(|e| e.to_string())?);
                let vb = g.constant(Tensor::from_rows(&zb).map_err(|e| e.to_string())?);
                let l = batch_contrastive_loss(&mut g, params, va, vb).map_err(|e| e.to_string())?;
                Ok(g.value(l).item())
            };
            let got = batch(&params)?;
            worst_batch = worst_batch.max((got - batch_loss(kind, tau, lambda, symmetric, &za, &zb)).abs());

            if kind == LossKind::SmoothInfoNce {
                let one = LossParams { lambda: 1.0, ..params };
                let info = LossParams { kind: LossKind::InfoNce, ..one };
                worst_identity = worst_identity.max((batch(&one)? - batch(&info)?).abs());
                let s1 = contrastive_loss(&one, &a, &p, &refs).map_err(|e| e.to_string())?;
                let i1 = contrastive_loss(&info, &a, &p, &refs).map_err(|e| e.to_string())?;
                worst_identity = worst_identity.max((s1 - i1).abs());
                let zero = LossParams { lambda: 0.0, ..params };
                ensure(batch(&zero)? == 0.0, || "batch smooth_info_nce(λ=0) is not exactly 0".into())?;
                let s0 = contrastive_loss(&zero, &a, &p, &refs).map_err(|e| e.to_string())?;
                ensure(s0 == 0.0, || format!("smooth_info_nce(λ=0) = {s0}"))?;
            }
        }
    }
    ensure(worst_scalar <= 1e-10 && worst_batch <= 1e-10, || {
        format!("oracle error scalar {worst_scalar:e}, batch {worst_batch:e}")
    })?;
    ensure(worst_identity <= 1e-12, || format!("λ=1 vs info_nce differ by {worst_identity:e}"))?;
    Ok(format!(
        "4 losses x 100 instances; max |err| scalar {worst_scalar:.1e}, batch {worst_batch:.1e}; λ=1 identity {worst_identity:.1e}; λ=0 exact"
    ))
}

struct GradTally {
    checks: usize,
    worst_rel: f64,
    worst_abs: f64,
    failures: Vec<String>,
}

impl GradTally {
    fn record(&mut self, name: &str, r: pssl_core::Result<GradCheck>) {
        self.checks += 1;
        match r {
            Ok(r) => {
                self.worst_rel = self.worst_rel.max(r.max_rel);
                self.worst_abs = self.worst_abs.max(r.max_abs_small);
                if !r.passes(GRAD_REL_TOL, GRAD_ABS_TOL) || r.checked == 0 {
                    self.failures.push(format!("{name}: {r:?}"));
                }
            }
            Err(e) => self.failures.push(format!("{name}: {e}")),
        }
    }

    fn prim(&mut self, name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> pssl_core::Result<Var>) {
        self.record(name, check_gradients(inputs, f, FD_STEP));
    }
}

fn weights_dot(g: &mut Graph, y: Var, seed: u64) -> pssl_core::Result<Var> {
    let w = g.constant(seeded_tensor(g.shape(y), seed, 1.0));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn micro_configs() -> BackboneConfigs {
    BackboneConfigs {
        mlp: MlpConfig { hidden: vec![3], ..MlpConfig::default() },
        fcnn: FcnnConfig { n_blocks: 1, filters: 2, kernel: 3, ..FcnnConfig::default() },
        transformer: TransformerConfig { n_layers: 1, d_model: 4, n_heads: 2, d_ff: 8, ..TransformerConfig::default() },
    }
}

fn c2_gradients() -> Outcome {
    let mut t = GradTally { checks: 0, worst_rel: 0.0, worst_abs: 0.0, failures: Vec::new() };
    let s = seeded_tensor;
    t.prim("matmul", &[s(&[2, 3, 4], 1, 1.0), s(&[4, 5], 2, 1.0)], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weights_dot(g, y, 3)
    });
    t.prim("bmm", &[s(&[2, 3, 4], 4, 1.0), s(&[2, 4, 5], 5, 1.0)], |g, v| {
        let y = g.bmm(v[0], v[1], false)?;
        weights_dot(g, y, 6)
    });
    t.prim("bmm_t", &[s(&[2, 3, 4], 7, 1.0), s(&[2, 5, 4], 8, 1.0)], |g, v| {
        let y = g.bmm(v[0], v[1], true)?;
        weights_dot(g, y, 9)
    });
    t.prim("matmul_nt", &[s(&[3, 4], 10, 1.0), s(&[5, 4], 11, 1.0)], |g, v| {
        let y = g.matmul_nt(v[0], v[1])?;
        weights_dot(g, y, 12)
    });
    let bin = [s(&[3, 4], 1, 1.0), s(&[4], 2, 1.0)];
    t.prim("add", &bin, |g, v| {
        let y = g.add(v[0], v[1])?;
        weights_dot(g, y, 3)
    });
    t.prim("sub", &bin, |g, v| {
        let y = g.sub(v[1], v[0])?;
        weights_dot(g, y, 4)
    });
    t.prim("mul", &bin, |g, v| {
        let y = g.mul(v[0], v[1])?;
        weights_dot(g, y, 5)
    });
    let x = [s(&[10], 11, 2.0)];
    t.prim("scale+add_scalar", &x, |g, v| {
        let y = g.scale(v[0], -1.7)?;
        let y = g.add_scalar(y, 0.3)?;
        weights_dot(g, y, 5)
    });
    t.prim("gelu", &x, |g, v| {
        let y = g.gelu(v[0])?;
        weights_dot(g, y, 1)
    });
    t.prim("tanh", &x, |g, v| {
        let y = g.tanh(v[0])?;
        weights_dot(g, y, 2)
    });
    t.prim("sigmoid", &x, |g, v| {
        let y = g.sigmoid(v[0])?;
        weights_dot(g, y, 3)
    });
    t.prim("exp", &x, |g, v| {
        let y = g.exp(v[0])?;
        weights_dot(g, y, 4)
    });
    let r = [Tensor::new(&[6], vec![-1.0, -0.3, 0.2, 0.7, 1.5, -2.0]).unwrap()];
    t.prim("relu", &r, |g, v| {
        let y = g.relu(v[0])?;
        weights_dot(g, y, 6)
    });
    t.prim("log", &[s(&[6], 12, 1.0).map(|v| v + 1.5)], |g, v| {
        let y = g.log(v[0])?;
        weights_dot(g, y, 7)
    });
    let x3 = [s(&[2, 3, 4], 21, 1.0)];
    t.prim("softmax", &x3, |g, v| {
        let y = g.softmax(v[0])?;
        weights_dot(g, y, 8)
    });
    t.prim("log_softmax", &x3, |g, v| {
        let y = g.log_softmax(v[0])?;
        weights_dot(g, y, 1)
    });
    t.prim("sum", &x3, |g, v| {
        let y = g.mul(v[0], v[0])?;
        g.sum(y)
    });
    t.prim("mean", &x3, |g, v| g.mean(v[0]));
    for axis in 0..3 {
        t.prim("sum_axis", &x3, |g, v| {
            let y = g.sum_axis(v[0], axis)?;
            weights_dot(g, y, 2)
        });
        t.prim("mean_axis", &x3, |g, v| {
            let y = g.mean_axis(v[0], axis)?;
            weights_dot(g, y, 3)
        });
        t.prim("slice", &x3, |g, v| {
            let y = g.slice(v[0], axis, 1, 2)?;
            weights_dot(g, y, 4)
        });
    }
    t.prim("permute", &x3, |g, v| {
        let y = g.permute(v[0], &[2, 0, 1])?;
        weights_dot(g, y, 5)
    });
    t.prim("transpose+reshape", &x3, |g, v| {
        let y = g.transpose(v[0], 0, 2)?;
        let y = g.reshape(y, &[4, 6])?;
        weights_dot(g, y, 6)
    });
    t.prim("concat", &[s(&[2, 3], 1, 1.0), s(&[2, 5], 2, 1.0)], |g, v| {
        let y = g.concat(&[v[0], v[1], v[0]], 1)?;
        weights_dot(g, y, 7)
    });
    t.prim("layer_norm", &[s(&[3, 5], 1, 2.0), s(&[5], 2, 1.0), s(&[5], 3, 1.0)], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2])?;
        weights_dot(g, y, 4)
    });
    let bn = [s(&[4, 3, 5], 5, 2.0), s(&[3], 6, 1.0), s(&[3], 7, 1.0)];
    t.prim("batch_norm(train)", &bn, |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], BatchNormMode::Train)?;
        weights_dot(g, y, 8)
    });
    let (m, var) = (vec![0.1, -0.2, 0.3], vec![1.5, 0.5, 2.0]);
    t.prim("batch_norm(eval)", &bn, |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &m, var: &var })?;
        weights_dot(g, y, 9)
    });
    t.prim("l2_normalize", &[s(&[3, 4], 10, 1.0)], |g, v| {
        let y = g.l2_normalize(v[0])?;
        weights_dot(g, y, 11)
    });
    t.prim("cosine_similarity_matrix", &[s(&[4, 3], 1, 1.0), s(&[5, 3], 2, 1.0)], |g, v| {
        let y = g.cosine_similarity_matrix(v[0], v[1])?;
        weights_dot(g, y, 3)
    });
    t.prim("mse_loss", &[s(&[4, 3], 4, 1.0), s(&[4, 3], 5, 1.0)], |g, v| g.mse_loss(v[0], v[1]));
    t.prim("cross_entropy_loss", &[s(&[5, 3], 6, 2.0)], |g, v| g.cross_entropy_loss(v[0], &[0, 2, 1, 1, 0]));
    t.prim("conv1d", &[s(&[2, 3, 9], 1, 1.0), s(&[4, 3, 5], 2, 1.0), s(&[4], 3, 1.0)], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2])?;
        weights_dot(g, y, 4)
    });
    let pool = Tensor::new(&[1, 2, 6], (0..12).map(|i| ((i * 7) % 12) as f64 * 0.1).collect()).unwrap();
    t.prim("maxpool1d", &[pool], |g, v| {
        let y = g.maxpool1d(v[0])?;
        weights_dot(g, y, 5)
    });
    t.prim("dropout", &[s(&[20], 6, 1.0)], |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = g.dropout(v[0], 0.3, true, &mut rng)?;
        weights_dot(g, y, 7)
    });
    let n_prims = t.checks;

    // Composed encoder + objective graphs, checked w.r.t. every trainable parameter.
    let cfg = micro_configs();
    let x = seeded_tensor(&[4, 256], 7, 1.0);
    let (xa, xb) = (seeded_tensor(&[3, 256], 8, 1.0), seeded_tensor(&[3, 256], 9, 1.0));
    let mut max_params = 0;
    for b in Backbone::ALL {
        let rng = |s| ChaCha8Rng::seed_from_u64(s);
        let mut store = ParamStore::new();
        let clf = Classifier::build(b, &cfg, &mut store, &mut rng(5)).map_err(|e| e.to_string())?;
        max_params = max_params.max(store.num_trainable());
        let r = check_param_gradients(
            &store,
            |s| {
                let mut s = s.clone();
                let mut r = rng(11);
                let mut ctx = Ctx::new(&mut s, true, &mut r);
                let xv = ctx.constant(x.clone());
                let logits = clf.logits(&mut ctx, xv)?;
                let loss = ctx.graph.cross_entropy_loss(logits, &[0, 1, 1, 0])?;
                Ok((ctx.graph, loss))
            },
            FD_STEP,
        );
        t.record(&format!("{b}+cross_entropy"), r);

        for kind in LossKind::ALL {
            let params = LossParams::new(kind, 0.5, 0.75);
            // A few-unit relu projection can zero out a whole row; take the first init without one.
            let mut checked = false;
            for init in 6..40u64 {
                let mut store = ParamStore::new();
                let enc = Encoder::build(b, &cfg, &mut store, &mut rng(init)).map_err(|e| e.to_string())?;
                let proj = ProjectionHead::build(&mut store, "projector.", enc.d_embed(), &mut rng(init + 100));
                let f = |s: &ParamStore| {
                    let mut s = s.clone();
                    let mut r = rng(12);
                    let mut ctx = Ctx::new(&mut s, true, &mut r);
                    let va = ctx.constant(xa.clone());
                    let vb = ctx.constant(xb.clone());
                    let ha = enc.forward(&mut ctx, va)?;
                    let hb = enc.forward(&mut ctx, vb)?;
                    let za = proj.forward(&mut ctx, ha)?;
                    let zb = proj.forward(&mut ctx, hb)?;
                    let loss = batch_contrastive_loss(&mut ctx.graph, &params, za, zb)?;
                    Ok((ctx.graph, loss))
                };
                if f(&store).is_err() {
                    continue;
                }
                max_params = max_params.max(store.num_trainable());
                t.record(&format!("{b}+{kind} (init {init})"), check_param_gradients(&store, f, FD_STEP));
                checked = true;
                break;
            }
            if !checked {
                t.failures.push(format!("{b}+{kind}: no non-degenerate init found"));
            }
        }

        let mut store = ParamStore::new();
        let enc = Encoder::build(b, &cfg, &mut store, &mut rng(8)).map_err(|e| e.to_string())?;
        let head = DinoHead::build(&mut store, "dino_head.", enc.d_embed(), 4, &mut rng(9));
        max_params = max_params.max(store.num_trainable());
        let target = teacher_probs(&seeded_tensor(&[4, 4], 13, 2.0), &[0.1, -0.1, 0.0, 0.2], 0.04);
        let r = check_param_gradients(
            &store,
            |s| {
                let mut s = s.clone();
                let mut r = rng(13);
                let mut ctx = Ctx::new(&mut s, true, &mut r);
                let xv = ctx.constant(x.clone());
                let h = enc.forward(&mut ctx, xv)?;
                let logits = head.forward(&mut ctx, h)?;
                let loss = dino_loss(&mut ctx.graph, &target, logits, 0.1)?;
                Ok((ctx.graph, loss))
            },
            FD_STEP,
        );
        t.record(&format!("{b}+dino"), r);
    }
    if max_params > 1000 {
        t.failures.push(format!("composed graph has {max_params} parameters (> 1000)"));
    }
    if !t.failures.is_empty() {
        return Err(t.failures.join("; "));
    }
    Ok(format!(
        "{n_prims} primitive checks + {} composed graphs (≤ {max_params} params); worst rel {:.1e}, worst small-grad abs {:.1e}",
        t.checks - n_prims,
        t.worst_rel,
        t.worst_abs
    ))
}

/// Amplitude of the `f` Hz component of `x` by a single-bin DFT.
fn bin_amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in x.iter().enumerate() {
        let ph = 2.0 * std::f64::consts::PI * f * n as f64 / fs;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

fn c3_dsp() -> Outcome {
    let fs = 128.0;
    let spec = FilterSpec::default();
    let filt = |x: Vec<f64>| -> Result<Vec<f64>, String> {
        Ok(bandpass_filtfilt(&RawSignal::new(x, fs).map_err(|e| e.to_string())?, &spec)
            .map_err(|e| e.to_string())?
            .samples)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sym = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(1000..4000);
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1.7 * i as f64 / fs).sin() + rng.random_range(-0.5..0.5))
            .collect();
        let fwd = filt(x.clone())?;
        let mut back = filt(x.into_iter().rev().collect())?;
        back.reverse();
        let edge = (0.5 * fs) as usize;
        for i in edge..n - edge {
            worst_sym = worst_sym.max((fwd[i] - back[i]).abs());
        }
    }
    ensure(worst_sym <= 1e-9, || format!("time-reversal mismatch {worst_sym:e}"))?;

    // Sine response measured over an integer number of periods well inside the record.
    let response = |f: f64| -> Result<f64, String> {
        let total_s = 600.0;
        let n = (total_s * fs) as usize;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect();
        let y = filt(x)?;
        let (lo, hi) = ((200.0 * fs) as usize, (400.0 * fs) as usize);
        Ok(bin_amplitude(&y[lo..hi], f, fs))
    };
    let gain_2hz = response(2.0)?;
    let att_low = -20.0 * response(0.05)?.log10();
    let att_high = -20.0 * response(20.0)?.log10();
    ensure((0.95..=1.0).contains(&gain_2hz), || format!("2 Hz gain {gain_2hz}"))?;
    ensure(att_low >= 60.0, || format!("0.05 Hz attenuation {att_low:.1} dB"))?;
    ensure(att_high >= 60.0, || format!("20 Hz attenuation {att_high:.1} dB"))?;

    for n in [2usize, 3, 17, 256, 300] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let same = resample_linear(&x, n).map_err(|e| e.to_string())?;
        ensure(same == x, || format!("identity resample of length {n} is not exact"))?;
        let y = resample_linear(&x, 256).map_err(|e| e.to_string())?;
        ensure(y[0] == x[0] && y[255] == x[n - 1], || format!("endpoints not exact for length {n}"))?;
    }
    Ok(format!(
        "reversal err {worst_sym:.1e}; 2 Hz gain {gain_2hz:.6}; attenuation 0.05 Hz {att_low:.1} dB, 20 Hz {att_high:.1} dB; resample exact"
    ))
}

fn oracle_flags(pulses: &[Vec<f64>]) -> Vec<bool> {
    let stats: Vec<[f64; 3]> = pulses
        .iter()
        .map(|p| {
            let (k, s, d) = moments(p);
            [k, s, d]
        })
        .collect();
    let n = stats.len() as f64;
    let mut bands = [(0.0, 0.0); 3];
    for (j, band) in bands.iter_mut().enumerate() {
        let mu = stats.iter().map(|s| s[j]).sum::<f64>() / n;
        let sigma = (stats.iter().map(|s| (s[j] - mu).powi(2)).sum::<f64>() / n).sqrt();
        *band = (mu - 2.0 * sigma, mu + 2.0 * sigma);
    }
    stats
        .iter()
        .map(|s| (0..3).any(|j| s[j] < bands[j].0 || s[j] > bands[j].1))
        .collect()
}

fn c4_annotation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut flagged = 0usize;
    for group in 0..1000 {
        let n = rng.random_range(3..=40);
        let pulses: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
                if rng.random_bool(0.15) {
                    let at = rng.random_range(0..256);
                    v[at] += rng.random_range(3.0..10.0);
                }
                v
            })
            .collect();
        let ann = annotate_signal(group, &pulses).map_err(|e| e.to_string())?;
        let got: Vec<bool> = ann.labels.iter().map(|l| l.is_artifact()).collect();
        let want = oracle_flags(&pulses);
        ensure(got == want, || format!("group {group}: flags differ from band oracle"))?;
        flagged += got.iter().filter(|f| **f).count();
    }

    let cfg = SynthConfig { seed: 44, n_signals: 20, duration_s: 60.0, ..SynthConfig::default() };
    let (signals, truths) = generate(&cfg).map_err(|e| e.to_string())?;
    let ds = build_dataset(&signals, Some(&truths), &FilterSpec::default(), 0).map_err(|e| e.to_string())?;
    let pairs: Vec<(Label, Label)> = ds.records.iter().filter_map(|r| Some((r.label?, r.truth?))).collect();
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64;
    ensure(agree >= 0.90, || format!("ground-truth agreement {agree:.4} < 0.90"))?;
    Ok(format!(
        "1000 groups match oracle exactly ({flagged} flags); synthgen agreement {:.2}% over {} pulses",
        100.0 * agree,
        pairs.len()
    ))
}

fn c5_masking() -> Outcome {
    let mask_size = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<Vec<f64>> = (0..1000)
        .map(|i| seeded_tensor(&[256], i, 1.0).map(|v| v + 2.0).into_data())
        .collect();
    let n_bins = 256 - mask_size + 1;
    let mut counts = vec![0usize; n_bins];
    for _ in 0..100 {
        let (masked, spec) = mask_rows(&base, mask_size, &mut rng).map_err(|e| e.to_string())?;
        for (row, start) in masked.iter().zip(&spec.positions) {
            let zeros: Vec<usize> = (0..256).filter(|i| row[*i] == 0.0).collect();
            ensure(
                zeros.len() == mask_size && zeros.windows(2).all(|w| w[1] == w[0] + 1) && zeros[0] == *start,
                || format!("row masked at {start} is not one contiguous span of {mask_size}"),
            )?;
            counts[*start] += 1;
        }
    }
    let draws: usize = counts.iter().sum();
    let expected = draws as f64 / n_bins as f64;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((n_bins - 1) as f64).map_err(|e| e.to_string())?;
    let p = 1.0 - dist.cdf(chi2);
    ensure(p > 0.001, || format!("chi-square {chi2:.1}, p = {p:e}"))?;
    Ok(format!("{draws} draws over {n_bins} positions; chi-square {chi2:.1}, p = {p:.3}"))
}

fn c6_adasyn() -> Outcome {
    let cfg = AdasynConfig::default();
    ensure(adasyn_budget(2, 8, &cfg) == 6, || "budget(2, 8) != 6".into())?;
    ensure(adasyn_budget(6, 8, &cfg) == 0, || "ratio 0.75 must not trigger".into())?;
    ensure(adasyn_budget(5, 8, &cfg) == 3, || "budget(5, 8) != 3".into())?;
    let half = AdasynConfig { beta: 0.5, ..cfg };
    ensure(adasyn_budget(1, 10, &half) == 5, || "budget(1, 10, β=0.5) != round(4.5) = 5".into())?;

    // 1-D layout with K = 2: A and D each have one majority point among their
    // two nearest neighbors, B and C none.
    let k2 = AdasynConfig { k: 2, ..cfg };
    let minority: Vec<Vec<f64>> = [0.0, 10.0, 11.0, 21.0].iter().map(|v| vec![*v]).collect();
    let mut majority: Vec<Vec<f64>> = vec![vec![-0.5], vec![21.5]];
    majority.extend((0..7).map(|i| vec![1000.0 + i as f64]));
    let w = adasyn_weights(&minority, &majority, 2);
    ensure(w == vec![0.5, 0.0, 0.0, 0.5], || format!("weights {w:?}"))?;
    let g_total = adasyn_budget(4, 9, &k2);
    let g = apportion(&w, g_total);
    ensure(g_total == 5 && g == vec![3, 0, 0, 2], || format!("counts {g:?} of {g_total}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let synth = adasyn_oversample(&minority, &majority, &k2, &mut rng).map_err(|e| e.to_string())?;
    let per_base: Vec<usize> = (0..4).map(|i| synth.iter().filter(|s| s.base == i).count()).collect();
    ensure(per_base == g, || format!("generated per seed point {per_base:?}"))?;

    let mut worst = 0.0f64;
    let mut worst_slack = 0i64;
    for trial in 0..50u64 {
        let m_s = rng.random_range(2..15);
        let m_l = m_s + rng.random_range(5..60);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..m_s + m_l {
            let minority = i < m_s;
            let shift = if minority { 0.7 } else { 0.0 };
            rows.push(seeded_tensor(&[6], trial * 1000 + i as u64, 1.0).map(|v| v + shift).into_data());
            labels.push(if minority { Label::Artifact } else { Label::Clean });
        }
        let (minr, majr): (Vec<&[f64]>, Vec<&[f64]>) = (
            rows[..m_s].iter().map(Vec::as_slice).collect(),
            rows[m_s..].iter().map(Vec::as_slice).collect(),
        );
        let synth = adasyn_oversample(&minr, &majr, &cfg, &mut rng).map_err(|e| e.to_string())?;
        for s in &synth {
            let (x, z) = (minr[s.base], minr[s.neighbor]);
            for j in 0..6 {
                worst = worst.max((s.values[j] - (x[j] + s.u * (z[j] - x[j]))).abs());
            }
        }
        let mut r2 = rows.clone();
        let mut l2 = labels.clone();
        balance(&mut r2, &mut l2, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let art = l2.iter().filter(|l| l.is_artifact()).count() as i64;
        let clean = l2.len() as i64 - art;
        let slack = (art - clean).abs();
        worst_slack = worst_slack.max(slack - m_s as i64);
        ensure(slack <= m_s as i64, || format!("trial {trial}: post-merge imbalance {slack} > m_s {m_s}"))?;
    }
    ensure(worst <= 1e-9, || format!("collinearity residual {worst:e}"))?;
    Ok(format!(
        "budgets and weights match hand values; apportion [3,0,0,2]; collinearity residual {worst:.1e}; balance within slack (worst margin {worst_slack})"
    ))
}

fn c7_metrics() -> Outcome {
    let to_label = |b: bool| if b { Label::Artifact } else { Label::Clean };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n = rng.random_range(1..300);
        let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let pl: Vec<Label> = pred.iter().map(|b| to_label(*b)).collect();
        let tl: Vec<Label> = truth.iter().map(|b| to_label(*b)).collect();
        let m = MetricsReport::from_predictions(&pl, &tl).map_err(|e| e.to_string())?;
        let [tp, fp, fn_, tn] = confusion(&pred, &truth);
        ensure([m.tp, m.fp, m.fn_, m.tn] == [tp, fp, fn_, tn], || format!("trial {trial}: counts differ"))?;
        let (tpf, fpf, fnf, tnf) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let acc = (tpf + tnf) / n as f64;
        let pre = if tp + fp > 0 { tpf / (tpf + fpf) } else { 0.0 };
        let rec = if tp + fn_ > 0 { tpf / (tpf + fnf) } else { 0.0 };
        let f1 = if pre + rec > 0.0 { 2.0 * pre * rec / (pre + rec) } else { 0.0 };
        for (name, got, want) in [("acc", m.accuracy, acc), ("pre", m.precision, pre), ("rec", m.recall, rec), ("f1", m.f1, f1)] {
            ensure((got - want).abs() <= 1e-12, || format!("trial {trial}: {name} {got} vs {want}"))?;
        }
    }
    let m = MetricsReport::from_counts(3, 1, 2, 4).map_err(|e| e.to_string())?;
    let want = [0.7, 0.75, 0.6, 0.6667];
    let got = [m.accuracy, m.precision, m.recall, m.f1];
    ensure(got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 5e-5), || format!("3/1/2/4 case gives {got:?}"))?;
    Ok(format!(
        "100 random vectors match the confusion oracle; 3/1/2/4 -> ({:.4}, {:.4}, {:.4}, {:.4})",
        got[0], got[1], got[2], got[3]
    ))
}

fn final_epoch_std(log: &[LossRecord]) -> f64 {
    let last = log.iter().map(|r| r.epoch).max().unwrap_or(0);
    let v: Vec<f64> = log.iter().filter(|r| r.epoch == last).map(|r| r.loss).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Transformer reduced in width and depth so the end-to-end run fits the time budget.
fn reduced_transformer() -> BackboneConfigs {
    BackboneConfigs {
        transformer: TransformerConfig { n_layers: 2, d_model: 32, n_heads: 4, d_ff: 128, ..TransformerConfig::default() },
        ..BackboneConfigs::default()
    }
}

fn c8_end_to_end() -> Outcome {
    let synth = SynthConfig { seed: 8, n_signals: 57, duration_s: 60.0, ..SynthConfig::default() };
    let (signals, truths) = generate(&synth).map_err(|e| e.to_string())?;
    let mut ds = build_dataset(&signals, Some(&truths), &FilterSpec::default(), 8).map_err(|e| e.to_string())?;
    let smooth = Arm::Contrastive(LossKind::SmoothInfoNce);
    let info = Arm::Contrastive(LossKind::InfoNce);
    let cfg = GridConfig {
        backbones: vec![Backbone::Transformer],
        arms: vec![Arm::Supervised, smooth, info],
        fractions: vec![0.10],
        seeds: vec![0, 1, 2],
        nets: reduced_transformer(),
        pretrain: PretrainConfig { epochs: 5, ..PretrainConfig::default() },
        finetune: FinetuneConfig { epochs: 20, patience: 5, ..FinetuneConfig::default() },
        loss: LossParams::new(LossKind::SmoothInfoNce, 0.1, 0.75),
        label_source: LabelSource::Truth,
        ..GridConfig::default()
    };
    let out = run_grid(&mut ds, &cfg).map_err(|e| e.to_string())?;
    let f1 = |arm: Arm| -> Vec<f64> { out.rows.iter().filter(|r| r.arm == arm).map(|r| r.metrics.f1).collect() };
    let (f_sup, f_smooth, f_info) = (f1(Arm::Supervised), f1(smooth), f1(info));
    let (m_sup, m_smooth) = (median(&f_sup), median(&f_smooth));
    let stds = |arm: Arm| -> Vec<f64> { out.logs.iter().filter(|l| l.arm == arm).map(|l| final_epoch_std(&l.log)).collect() };
    let (s_smooth, s_info) = (stds(smooth), stds(info));
    let (ms_smooth, ms_info) = (median(&s_smooth), median(&s_info));
    let detail = format!(
        "{} pulses; median F1 supervised {m_sup:.4} {f_sup:.3?}, smooth {m_smooth:.4} {f_smooth:.3?} (info_nce {:.4}); final-epoch batch-loss std smooth {ms_smooth:.4} {s_smooth:.4?} vs info_nce {ms_info:.4} {s_info:.4?}",
        ds.len(),
        median(&f_info)
    );
    let a = m_smooth >= m_sup;
    let b = ms_smooth <= ms_info;
    match (a, b) {
        (true, true) => Ok(detail),
        _ => Err(format!("(a) {} (b) {}: {detail}", if a { "ok" } else { "FAILED" }, if b { "ok" } else { "FAILED" })),
    }
}

fn c9_determinism() -> Outcome {
    let synth = SynthConfig { seed: 9, n_signals: 12, duration_s: 40.0, ..SynthConfig::default() };
    let (signals, truths) = generate(&synth).map_err(|e| e.to_string())?;
    let cfg = GridConfig {
        backbones: vec![Backbone::Mlp],
        arms: vec![Arm::Supervised, Arm::Contrastive(LossKind::SmoothInfoNce)],
        fractions: vec![0.10],
        seeds: vec![3],
        nets: BackboneConfigs {
            mlp: MlpConfig { hidden: vec![64], ..MlpConfig::default() },
            ..BackboneConfigs::default()
        },
        pretrain: PretrainConfig { epochs: 2, ..PretrainConfig::default() },
        finetune: FinetuneConfig { epochs: 5, ..FinetuneConfig::default() },
        ..GridConfig::default()
    };
    let run = || -> Result<String, String> {
        let mut ds = build_dataset(&signals, Some(&truths), &FilterSpec::default(), 9).map_err(|e| e.to_string())?;
        let out = run_grid(&mut ds, &cfg).map_err(|e| e.to_string())?;
        Ok(results_csv(&out.rows))
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "results CSV differs between identical runs".into())?;
    let lines = a.lines().count() - 1;
    Ok(format!("{lines} result rows bit-identical across runs ({} bytes)", a.len()))
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "loss oracles", budget: Duration::from_secs(5), run: c1_loss_oracles },
        Criterion { id: 2, name: "gradient checks", budget: Duration::from_secs(60), run: c2_gradients },
        Criterion { id: 3, name: "dsp", budget: Duration::from_secs(10), run: c3_dsp },
        Criterion { id: 4, name: "annotation", budget: Duration::from_secs(20), run: c4_annotation },
        Criterion { id: 5, name: "masking contract", budget: Duration::from_secs(10), run: c5_masking },
        Criterion { id: 6, name: "adasyn", budget: Duration::from_secs(10), run: c6_adasyn },
        Criterion { id: 7, name: "metrics", budget: Duration::from_secs(5), run: c7_metrics },
        Criterion { id: 8, name: "end-to-end direction", budget: Duration::from_secs(15 * 60), run: c8_end_to_end },
        Criterion { id: 9, name: "determinism", budget: Duration::from_secs(120), run: c9_determinism },
    ];
    let only: Option<u8> = std::env::var("PSSL_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_none_or(|o| o == c.id)) {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let over = elapsed > c.budget;
        let (status, detail) = match (&result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("over the {:?} budget; {d}", c.budget)),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {} [{}]: {status} ({:.1} s / {} s) {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
