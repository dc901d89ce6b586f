//! Butterworth band-pass design as cascaded biquads, and zero-phase
//! forward-backward application.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::RawSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub low_cut: f64,
    pub high_cut: f64,
    /// Butterworth prototype order, per direction.
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_cut: 0.5,
            high_cut: 5.0,
            order: 4,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::FilterDesign("order must be positive".into()));
        }
        if !(self.low_cut > 0.0 && self.low_cut < self.high_cut && self.high_cut < fs / 2.0) {
            return Err(Error::FilterDesign(format!(
                "cutoffs must satisfy 0 < low_cut < high_cut < fs/2 (got low_cut={}, high_cut={}, fs={fs})",
                self.low_cut, self.high_cut
            )));
        }
        Ok(())
    }
}

/// One second-order section `b(z) / a(z)` with `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }

    /// Largest pole radius of this section.
    pub fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

impl SosFilter {
    /// Design a digital Butterworth band-pass via the bilinear transform.
    ///
    /// The analog low-pass prototype of order `n` is shifted to a band-pass of
    /// order `2n`; the result has `n` sections, each with one zero at `z = 1`
    /// and one at `z = -1`. Gain is unity at the prewarped geometric center.
    pub fn butter_bandpass(spec: &FilterSpec, fs: f64) -> Result<Self> {
        spec.validate(fs)?;
        let n = spec.order;
        let fs2 = 2.0 * fs;
        let w_lo = fs2 * (PI * spec.low_cut / fs).tan();
        let w_hi = fs2 * (PI * spec.high_cut / fs).tan();
        let bw = w_hi - w_lo;
        let w0 = (w_lo * w_hi).sqrt();
        let w_center = 2.0 * (w0 / fs2).atan();

        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
        let mut pole_pairs: Vec<(Complex64, Complex64)> = Vec::with_capacity(n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im < -1e-12 {
                continue;
            }
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            let (s1, s2) = (half + root, half - root);
            if p.im > 1e-12 {
                pole_pairs.push((s1, s1.conj()));
                pole_pairs.push((s2, s2.conj()));
            } else {
                // Real prototype pole: its two band-pass poles form one section.
                pole_pairs.push((s1, s2));
            }
        }
        let sections = pole_pairs
            .into_iter()
            .map(|(s1, s2)| {
                let (z1, z2) = (bilinear(s1), bilinear(s2));
                let a1 = -(z1 + z2).re;
                let a2 = (z1 * z2).re;
                let mut bq = Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [1.0, a1, a2],
                };
                let g = bq.response(w_center).norm();
                for c in &mut bq.b {
                    *c /= g;
                }
                bq
            })
            .collect();
        Ok(Self { sections, fs })
    }

    /// Complex response of one forward pass at frequency `f` Hz.
    pub fn response(&self, f: f64) -> Complex64 {
        let w = 2.0 * PI * f / self.fs;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    /// Causal single pass with zero initial state (direct form II transposed).
    pub fn apply(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (b, a) = (s.b, s.a);
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b[0] * xin + z1;
                z1 = b[1] * xin - a[1] * y + z2;
                z2 = b[2] * xin - a[2] * y;
                *v = y;
            }
        }
    }

    /// Samples needed for the zero-state impulse response to decay below 1e-13.
    pub fn settle_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(Biquad::pole_radius)
            .fold(0.0, f64::max);
        if r <= 0.0 {
            return 0;
        }
        ((1e-13f64).ln() / r.ln()).ceil() as usize
    }

    /// Odd-reflection padding length used by [`filtfilt`](Self::filtfilt).
    pub fn pad_len(&self) -> usize {
        let order = self.sections.len();
        (3 * (order + 1)).max(self.settle_len())
    }

    /// Forward-backward filtering with odd-reflection padding on both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let pad = self.pad_len();
        let mut w: Vec<f64> = (-(pad as isize)..(n + pad) as isize)
            .map(|i| odd_extension(x, i))
            .collect();
        self.apply(&mut w);
        w.reverse();
        self.apply(&mut w);
        w.reverse();
        w[pad..pad + n].to_vec()
    }
}

/// Value of the point-symmetric (odd) extension of `x` at index `i`.
/// Indices past either end reflect repeatedly, so any padding length works.
fn odd_extension(x: &[f64], mut i: isize) -> f64 {
    let n = x.len() as isize;
    if n == 1 {
        return x[0];
    }
    let (first, last) = (x[0], x[(n - 1) as usize]);
    let mut sign = 1.0;
    let mut offset = 0.0;
    loop {
        if i < 0 {
            offset += sign * 2.0 * first;
            sign = -sign;
            i = -i;
        } else if i >= n {
            offset += sign * 2.0 * last;
            sign = -sign;
            i = 2 * (n - 1) - i;
        } else {
            return offset + sign * x[i as usize];
        }
    }
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass_filtfilt(signal: &RawSignal, spec: &FilterSpec) -> Result<RawSignal> {
    if signal.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("signal contains non-finite samples".into()));
    }
    let filter = SosFilter::butter_bandpass(spec, signal.fs)?;
    if signal.samples.len() <= 3 * spec.order {
        return Err(Error::Data(format!(
            "signal of {} samples is too short for order {} (need > {})",
            signal.samples.len(),
            spec.order,
            3 * spec.order
        )));
    }
    RawSignal::new(filter.filtfilt(&signal.samples), signal.fs)
}
