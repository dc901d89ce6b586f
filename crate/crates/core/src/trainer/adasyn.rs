use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdasynConfig {
    pub beta: f64,
    pub k: usize,
    pub d_th: f64,
}

impl Default for AdasynConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            k: 5,
            d_th: 0.75,
        }
    }
}

impl AdasynConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("adasyn.beta", format!("must be in [0, 1], got {}", self.beta)));
        }
        if self.k == 0 {
            return Err(Error::config("adasyn.k", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.d_th) {
            return Err(Error::config("adasyn.d_th", format!("must be in [0, 1], got {}", self.d_th)));
        }
        Ok(())
    }
}

/// One generated sample and the pair it was interpolated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub values: Vec<f64>,
    /// Index into `minority` of the seed point.
    pub base: usize,
    /// Index into `minority` of the neighbor.
    pub neighbor: usize,
    pub u: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` smallest entries of `d` (ties by index).
fn k_smallest(d: &[(f64, usize)], k: usize) -> Vec<usize> {
    let mut v = d.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Total number of samples to generate, `round((m_l - m_s) * beta)`, or 0
/// when the ratio already reaches `d_th`.
pub fn adasyn_budget(m_s: usize, m_l: usize, cfg: &AdasynConfig) -> usize {
    if m_l == 0 || m_s >= m_l || m_s as f64 / m_l as f64 >= cfg.d_th {
        return 0;
    }
    ((m_l - m_s) as f64 * cfg.beta).round() as usize
}

/// Split `total` across weights `w` (summing to 1) by largest remainder.
pub fn apportion(w: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = w.iter().map(|x| x * total as f64).collect();
    let mut g: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = g.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|a, b| (raw[*b] - raw[*b].floor()).total_cmp(&(raw[*a] - raw[*a].floor())).then(a.cmp(b)));
    for i in order.into_iter().take(total.saturating_sub(assigned)) {
        g[i] += 1;
    }
    g
}

/// Minority-neighbor density weights `r_i = Delta_i / K`, normalized.
pub fn adasyn_weights<P: AsRef<[f64]>>(minority: &[P], majority: &[P], k: usize) -> Vec<f64> {
    let m_s = minority.len();
    let mut r = Vec::with_capacity(m_s);
    for (i, x) in minority.iter().enumerate() {
        let x = x.as_ref();
        let mut d: Vec<(f64, usize)> = Vec::with_capacity(m_s + majority.len());
        for (j, y) in minority.iter().enumerate() {
            if j != i {
                d.push((sq_dist(x, y.as_ref()), j));
            }
        }
        for (j, y) in majority.iter().enumerate() {
            d.push((sq_dist(x, y.as_ref()), m_s + j));
        }
        let nn = k_smallest(&d, k);
        let delta = nn.iter().filter(|j| **j >= m_s).count();
        r.push(delta as f64 / k as f64);
    }
    let total: f64 = r.iter().sum();
    if total == 0.0 {
        vec![1.0 / m_s as f64; m_s]
    } else {
        r.into_iter().map(|v| v / total).collect()
    }
}

/// Adaptive synthetic minority oversampling.
pub fn adasyn_oversample<P: AsRef<[f64]>, R: Rng + ?Sized>(
    minority: &[P],
    majority: &[P],
    cfg: &AdasynConfig,
    rng: &mut R,
) -> Result<Vec<Synthetic>> {
    cfg.validate()?;
    let (m_s, m_l) = (minority.len(), majority.len());
    let g_total = adasyn_budget(m_s, m_l, cfg);
    if g_total == 0 {
        return Ok(Vec::new());
    }
    if m_s < 2 {
        return Err(Error::Imbalance(format!(
            "{m_s} minority sample(s); at least 2 are needed for interpolation"
        )));
    }
    let weights = adasyn_weights(minority, majority, cfg.k);
    let counts = apportion(&weights, g_total);
    let mut out = Vec::with_capacity(g_total);
    for (i, g) in counts.into_iter().enumerate() {
        if g == 0 {
            continue;
        }
        let x = minority[i].as_ref();
        let d: Vec<(f64, usize)> = minority
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, y)| (sq_dist(x, y.as_ref()), j))
            .collect();
        let nn = k_smallest(&d, cfg.k.min(m_s - 1));
        for _ in 0..g {
            let z = nn[rng.random_range(0..nn.len())];
            let xz = minority[z].as_ref();
            let u: f64 = rng.random();
            out.push(Synthetic {
                values: x.iter().zip(xz).map(|(a, b)| a + u * (b - a)).collect(),
                base: i,
                neighbor: z,
                u,
            });
        }
    }
    Ok(out)
}

/// Append ADASYN samples for whichever class is smaller.
pub fn balance<R: Rng + ?Sized>(
    rows: &mut Vec<Vec<f64>>,
    labels: &mut Vec<Label>,
    cfg: &AdasynConfig,
    rng: &mut R,
) -> Result<usize> {
    let (art, clean): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|i| labels[*i].is_artifact());
    let (min_idx, maj_idx, min_label) = if art.len() <= clean.len() {
        (art, clean, Label::Artifact)
    } else {
        (clean, art, Label::Clean)
    };
    let minority: Vec<&[f64]> = min_idx.iter().map(|i| rows[*i].as_slice()).collect();
    let majority: Vec<&[f64]> = maj_idx.iter().map(|i| rows[*i].as_slice()).collect();
    let synth = adasyn_oversample(&minority, &majority, cfg, rng)?;
    let n = synth.len();
    for s in synth {
        rows.push(s.values);
        labels.push(min_label);
    }
    Ok(n)
}
