use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{batch_tensor, Ctx, DinoHead, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DinoConfig {
    pub tau_s: f64,
    pub tau_t: f64,
    pub momentum: f64,
    pub center_momentum: f64,
    pub k: usize,
}

impl Default for DinoConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.1,
            tau_t: 0.04,
            momentum: 0.996,
            center_momentum: 0.9,
            k: 32,
        }
    }
}

impl DinoConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("dino.tau_s", self.tau_s), ("dino.tau_t", self.tau_t)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("dino.momentum", self.momentum), ("dino.center_momentum", self.center_momentum)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must be in [0, 1], got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::config("dino.k", "must be positive"));
        }
        Ok(())
    }
}

/// Student architecture; the teacher shares it with its own parameters.
#[derive(Debug, Clone)]
pub struct DinoModel {
    pub encoder: Encoder,
    pub head: DinoHead,
}

impl DinoModel {
    fn logits(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.encoder.forward(ctx, x)?;
        self.head.forward(ctx, h)
    }
}

#[derive(Debug, Clone)]
pub struct DinoState {
    pub config: DinoConfig,
    pub teacher: ParamStore,
    pub center: Vec<f64>,
}

impl DinoState {
    /// Teacher initialized as a copy of the student; zero center.
    pub fn new(config: DinoConfig, student: &ParamStore) -> Self {
        Self {
            config,
            teacher: student.clone(),
            center: vec![0.0; config.k],
        }
    }

    /// `teacher <- m * teacher + (1 - m) * student` over every entry, buffers included.
    pub fn update_teacher(&mut self, student: &ParamStore) {
        let m = self.config.momentum;
        for id in student.ids() {
            let s = student.get(id).data();
            for (t, s) in self.teacher.get_mut(id).data_mut().iter_mut().zip(s) {
                *t = m * *t + (1.0 - m) * s;
            }
        }
    }

    /// `c <- m_c * c + (1 - m_c) * mean_rows(teacher_logits)`.
    pub fn update_center(&mut self, teacher_logits: &Tensor) {
        let k = self.center.len();
        let rows = teacher_logits.len() / k;
        let mc = self.config.center_momentum;
        for (j, c) in self.center.iter_mut().enumerate() {
            let mean = (0..rows).map(|r| teacher_logits.data()[r * k + j]).sum::<f64>() / rows as f64;
            *c = mc * *c + (1.0 - mc) * mean;
        }
    }
}

/// Row-wise `softmax((t - c) / tau_t)`.
pub fn teacher_probs(teacher_logits: &Tensor, center: &[f64], tau_t: f64) -> Tensor {
    let k = center.len();
    let mut out = Vec::with_capacity(teacher_logits.len());
    for row in teacher_logits.data().chunks(k) {
        let z: Vec<f64> = row.iter().zip(center).map(|(t, c)| (t - c) / tau_t).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::new(teacher_logits.shape(), out).expect("same shape")
}

/// Cross-view distillation loss. Rows `0..B` of both inputs are view 1 and
/// rows `B..2B` view 2; each student view is matched to the other teacher view.
pub fn dino_loss(g: &mut Graph, teacher_p: &Tensor, student_logits: Var, tau_s: f64) -> Result<Var> {
    let s = g.shape(student_logits).to_vec();
    if s.len() != 2 || s[0] % 2 != 0 || teacher_p.shape() != s.as_slice() {
        return Err(Error::shape("dino_loss", teacher_p.shape(), &s));
    }
    let (n, k) = (s[0], s[1]);
    let b = n / 2;
    let mut swapped = Vec::with_capacity(n * k);
    swapped.extend_from_slice(&teacher_p.data()[b * k..]);
    swapped.extend_from_slice(&teacher_p.data()[..b * k]);
    let target = g.constant(Tensor::new(&[n, k], swapped)?);
    let scaled = g.scale(student_logits, 1.0 / tau_s)?;
    let log_ps = g.log_softmax(scaled)?;
    let prod = g.mul(target, log_ps)?;
    let total = g.sum(prod)?;
    g.scale(total, -1.0 / n as f64)
}

/// One student update followed by the teacher and center EMAs. Returns the loss.
pub fn dino_step(
    state: &mut DinoState,
    model: &DinoModel,
    student: &mut ParamStore,
    adam: &mut Adam,
    view_1: &[Vec<f64>],
    view_2: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if model.head.k != state.center.len() {
        return Err(Error::shape("dino_step", &[model.head.k], &[state.center.len()]));
    }
    if view_1.len() != view_2.len() || view_1.is_empty() {
        return Err(Error::shape("dino_step", &[view_1.len()], &[view_2.len()]));
    }
    let mut rows: Vec<&[f64]> = view_1.iter().map(Vec::as_slice).collect();
    rows.extend(view_2.iter().map(Vec::as_slice));
    let x = batch_tensor(&rows)?;

    let teacher_logits = {
        let mut ctx = Ctx::new(&mut state.teacher, false, rng).freeze("");
        let xv = ctx.constant(x.clone());
        let t = model.logits(&mut ctx, xv)?;
        ctx.graph.value(t).clone()
    };
    let pt = teacher_probs(&teacher_logits, &state.center, state.config.tau_t);

    let (value, grads) = {
        let mut ctx = Ctx::new(student, true, rng);
        let xv = ctx.constant(x);
        let s = model.logits(&mut ctx, xv)?;
        let loss = dino_loss(&mut ctx.graph, &pt, s, state.config.tau_s)?;
        (ctx.graph.value(loss).item(), ctx.graph.backward(loss)?)
    };
    adam.step(student, &grads);
    state.update_teacher(student);
    state.update_center(&teacher_logits);
    Ok(value)
}
