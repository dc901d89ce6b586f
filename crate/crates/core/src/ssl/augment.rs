use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mask::mask_one;
use crate::dsp::{normalize, PULSE_LEN};
use crate::error::{Error, Result};

/// Random view transform for contrastive and DINO pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub jitter_sigma: f64,
    pub scale_range: [f64; 2],
    pub max_shift: usize,
    pub mask_prob: f64,
    pub mask_size: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.05,
            scale_range: [0.8, 1.2],
            max_shift: 16,
            mask_prob: 0.5,
            mask_size: 32,
        }
    }
}

impl AugmentSpec {
    /// The transform that returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            jitter_sigma: 0.0,
            scale_range: [1.0, 1.0],
            max_shift: 0,
            mask_prob: 0.0,
            mask_size: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("augment.scale_range", format!("need lo ≤ hi, got [{lo}, {hi}]")));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::config("augment.jitter_sigma", "must be ≥ 0"));
        }
        if self.max_shift >= PULSE_LEN {
            return Err(Error::config("augment.max_shift", format!("must be < {PULSE_LEN}")));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::config("augment.mask_prob", "must be in [0, 1]"));
        }
        if self.mask_size > PULSE_LEN {
            return Err(Error::config("augment.mask_size", format!("must be ≤ {PULSE_LEN}")));
        }
        Ok(())
    }
}

/// Rotate right by `shift` samples (left when negative).
pub fn circular_shift(x: &[f64], shift: isize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let s = shift.rem_euclid(n as isize) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&x[n - s..]);
    out.extend_from_slice(&x[..n - s]);
    out
}

/// One augmented view, renormalized to zero mean and unit variance.
pub fn augment<R: Rng + ?Sized>(pulse: &[f64], spec: &AugmentSpec, rng: &mut R) -> Result<Vec<f64>> {
    let mut v = pulse.to_vec();
    if spec.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.jitter_sigma).map_err(|e| Error::config("augment.jitter_sigma", e.to_string()))?;
        v.iter_mut().for_each(|x| *x += noise.sample(rng));
    }
    let [lo, hi] = spec.scale_range;
    let a = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if a != 1.0 {
        v.iter_mut().for_each(|x| *x *= a);
    }
    if spec.max_shift > 0 {
        let m = spec.max_shift as i64;
        v = circular_shift(&v, rng.random_range(-m..=m) as isize);
    }
    if spec.mask_prob > 0.0 && spec.mask_size > 0 && rng.random_bool(spec.mask_prob) {
        v = mask_one(&v, spec.mask_size, rng)?.0;
    }
    Ok(normalize(&v).unwrap_or(v))
}

/// Two independent views of `pulse`.
pub fn augment_views<R: Rng + ?Sized>(pulse: &[f64], spec: &AugmentSpec, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if pulse.len() != PULSE_LEN {
        return Err(Error::shape("augment_views", &[pulse.len()], &[PULSE_LEN]));
    }
    Ok((augment(pulse, spec, rng)?, augment(pulse, spec, rng)?))
}
