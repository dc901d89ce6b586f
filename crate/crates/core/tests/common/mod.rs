//! Straight-from-formula reference implementations shared by the property
//! and acceptance suites. Deliberately naive: plain loops, no log-sum-exp.

#![allow(dead_code)]

use pssl_core::ssl::LossKind;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Single-anchor loss.
pub fn scalar_loss(kind: LossKind, tau: f64, lambda: f64, a: &[f64], p: &[f64], negs: &[Vec<f64>]) -> f64 {
    match kind {
        LossKind::Swce => {
            let num = (dot(p, a) / tau).exp();
            let mut den = num;
            for n in negs {
                den += (dot(p, n) / tau).exp();
            }
            -(num / den).ln()
        }
        _ => {
            let w = if kind == LossKind::SmoothInfoNce { lambda } else { 1.0 };
            let num = (dot(a, p) / tau).exp();
            let mut neg = 0.0;
            for n in negs {
                neg += (dot(a, n) / tau).exp();
            }
            -(num / (num + w * neg)).ln()
        }
    }
}

/// Batch loss over pairs `(za[i], zb[i])` with in-batch negatives.
pub fn batch_loss(kind: LossKind, tau: f64, lambda: f64, symmetric: bool, za: &[Vec<f64>], zb: &[Vec<f64>]) -> f64 {
    let b = za.len();
    match kind {
        LossKind::Swce => {
            let mut terms = Vec::new();
            for i in 0..b {
                let num = (dot(&za[i], &zb[i]) / tau).exp();
                let den: f64 = (0..b).map(|k| (dot(&za[k], &zb[i]) / tau).exp()).sum();
                terms.push(-(num / den).ln());
            }
            if symmetric {
                for i in 0..b {
                    let num = (dot(&za[i], &zb[i]) / tau).exp();
                    let den: f64 = (0..b).map(|k| (dot(&za[i], &zb[k]) / tau).exp()).sum();
                    terms.push(-(num / den).ln());
                }
            }
            terms.iter().sum::<f64>() / terms.len() as f64
        }
        _ => {
            let views: Vec<&Vec<f64>> = za.iter().chain(zb).collect();
            let n = 2 * b;
            let anchors = if symmetric { n } else { b };
            let mut total = 0.0;
            for i in 0..anchors {
                let p = (i + b) % n;
                let negs: Vec<Vec<f64>> = (0..n).filter(|k| *k != i && *k != p).map(|k| views[k].clone()).collect();
                total += scalar_loss(kind, tau, lambda, views[i], views[p], &negs);
            }
            total / anchors as f64
        }
    }
}

/// `[tp, fp, fn, tn]` by enumerating the four cells.
pub fn confusion(pred: &[bool], truth: &[bool]) -> [usize; 4] {
    let mut c = [0; 4];
    for (p, t) in pred.iter().zip(truth) {
        let cell = match (*p, *t) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[cell] += 1;
    }
    c
}

/// Population moments: (kurtosis, skewness, std), kurtosis non-excess.
pub fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / n;
    (m4 / (m2 * m2), m3 / m2.powf(1.5), m2.sqrt())
}
