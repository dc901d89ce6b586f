//! Contrastive objectives over cosine similarities.
//!
//! Every loss has the form `log sum_k w_k exp((s_k - s_pos) / tau)`, where the
//! positive term carries weight 1. Writing it relative to the positive keeps
//! it exactly zero when no other term survives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Allowed deviation of an embedding norm from 1.
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    NtXent,
    InfoNce,
    Swce,
    SmoothInfoNce,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::NtXent, LossKind::InfoNce, LossKind::Swce, LossKind::SmoothInfoNce];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::NtXent => "nt_xent",
            LossKind::InfoNce => "info_nce",
            LossKind::Swce => "swce",
            LossKind::SmoothInfoNce => "smooth_info_nce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "ntxent" => Ok(LossKind::NtXent),
            "infonce" => Ok(LossKind::InfoNce),
            "swce" => Ok(LossKind::Swce),
            "smoothinfonce" => Ok(LossKind::SmoothInfoNce),
            _ => Err(Error::config(
                "loss",
                format!("unknown loss `{s}` (expected nt_xent, info_nce, swce or smooth_info_nce)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    pub kind: LossKind,
    pub tau: f64,
    pub lambda: f64,
    /// Average over both anchor orderings `(i, j)` and `(j, i)`.
    pub symmetric: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            kind: LossKind::SmoothInfoNce,
            tau: 0.1,
            lambda: 0.75,
            symmetric: true,
        }
    }
}

impl LossParams {
    pub fn new(kind: LossKind, tau: f64, lambda: f64) -> Self {
        Self {
            kind,
            tau,
            lambda,
            symmetric: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", format!("tau > 0 required, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("lambda ≥ 0 required, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Weight applied to negative terms.
    fn negative_weight(&self) -> f64 {
        if self.kind == LossKind::SmoothInfoNce {
            self.lambda
        } else {
            1.0
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = dot(v, v).sqrt();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(Error::Contract(format!("{what} has norm {n}, expected an L2-normalized embedding")));
    }
    Ok(())
}

/// Loss of one anchor.
///
/// For `nt_xent`, `info_nce` and `smooth_info_nce` the denominator holds the
/// positive plus every entry of `negatives`. For `swce` it holds the
/// similarities of `positive` to `anchor` and to every entry of `negatives`.
pub fn contrastive_loss(params: &LossParams, anchor: &[f64], positive: &[f64], negatives: &[&[f64]]) -> Result<f64> {
    params.validate()?;
    check_unit(anchor, "anchor")?;
    check_unit(positive, "positive")?;
    for n in negatives {
        check_unit(n, "negative")?;
    }
    let tau = params.tau;
    let s_pos = dot(anchor, positive);
    let sum: f64 = match params.kind {
        LossKind::Swce => negatives.iter().map(|n| ((dot(positive, n) - s_pos) / tau).exp()).sum(),
        _ => {
            let w = params.negative_weight();
            w * negatives.iter().map(|n| ((dot(anchor, n) - s_pos) / tau).exp()).sum::<f64>()
        }
    };
    Ok(sum.ln_1p())
}

/// Batch loss over `B` sibling pairs: row `i` of `za` and row `i` of `zb` are
/// positives; every other in-batch view is a negative. Inputs must already be
/// L2-normalized rows.
pub fn batch_contrastive_loss(g: &mut Graph, params: &LossParams, za: Var, zb: Var) -> Result<Var> {
    params.validate()?;
    let (sa, sb) = (g.shape(za).to_vec(), g.shape(zb).to_vec());
    if sa.len() != 2 || sa != sb {
        return Err(Error::shape("contrastive_loss", &sa, &sb));
    }
    let b = sa[0];
    if b < 2 {
        return Err(Error::Data(format!("contrastive batch needs at least 2 pairs, got {b}")));
    }
    for v in [za, zb] {
        for row in g.value(v).data().chunks(sa[1]) {
            check_unit(row, "embedding")?;
        }
    }
    let inv_tau = 1.0 / params.tau;
    match params.kind {
        LossKind::Swce => {
            // s[k, i] = sim(a_k, b_i) / tau; anchor a_i's denominator is column i.
            let s = g.matmul_nt(za, zb)?;
            let s = g.scale(s, inv_tau)?;
            let eye = g.constant(Tensor::eye(b));
            let diag_m = g.mul(s, eye)?;
            let diag = g.sum_axis(diag_m, 0)?;
            let mut terms = vec![column_lse(g, s, diag)?];
            if params.symmetric {
                let st = g.transpose(s, 0, 1)?;
                terms.push(column_lse(g, st, diag)?);
            }
            mean_of(g, &terms)
        }
        _ => {
            let n = 2 * b;
            let z = g.concat(&[za, zb], 0)?;
            let s = g.matmul_nt(z, z)?;
            let s = g.scale(s, inv_tau)?;
            // Symmetric, so column i of s is anchor i's similarity row.
            let w_neg = params.negative_weight();
            let mut pos_mask = vec![0.0; n * n];
            let mut weights = vec![0.0; n * n];
            for i in 0..n {
                let p = (i + b) % n;
                for k in 0..n {
                    weights[k * n + i] = if k == i {
                        0.0
                    } else if k == p {
                        1.0
                    } else {
                        w_neg
                    };
                }
                pos_mask[p * n + i] = 1.0;
            }
            let pm = g.constant(Tensor::new(&[n, n], pos_mask)?);
            let pos_m = g.mul(s, pm)?;
            let pos = g.sum_axis(pos_m, 0)?;
            let d = g.sub(s, pos)?;
            let e = g.exp(d)?;
            let wm = g.constant(Tensor::new(&[n, n], weights)?);
            let e = g.mul(e, wm)?;
            let denom = g.sum_axis(e, 0)?;
            let per_anchor = g.log(denom)?;
            let used = if params.symmetric {
                per_anchor
            } else {
                g.slice(per_anchor, 0, 0, b)?
            };
            g.mean(used)
        }
    }
}

/// Per-column `log sum_k exp(s[k, i] - diag[i])`.
fn column_lse(g: &mut Graph, s: Var, diag: Var) -> Result<Var> {
    let d = g.sub(s, diag)?;
    let e = g.exp(d)?;
    let sum = g.sum_axis(e, 0)?;
    g.log(sum)
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let all = if terms.len() == 1 { terms[0] } else { g.concat(terms, 0)? };
    g.mean(all)
}
