//! Pulse preprocessing: band-pass filtering, segmentation, resampling to a
//! fixed length, and z-score normalization.

mod filter;
mod segment;

pub use filter::{bandpass_filtfilt, Biquad, FilterSpec, SosFilter};
pub use segment::{local_minima, segment_pulses, MAX_PULSE_S, MINIMUM_WINDOW_S, MIN_PULSE_S};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of samples in every resampled pulse.
pub const PULSE_LEN: usize = 256;

/// Standard deviation below which a pulse is treated as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f64>,
    pub fs: f64,
}

impl RawSignal {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Data(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.is_empty() {
            return Err(Error::Data("signal has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, fs })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Clean,
    Artifact,
}

impl Label {
    pub fn is_artifact(self) -> bool {
        self == Label::Artifact
    }

    pub fn class_index(self) -> usize {
        usize::from(self.is_artifact())
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 1 {
            Label::Artifact
        } else {
            Label::Clean
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Artifact => "artifact",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" | "0" => Ok(Label::Clean),
            "artifact" | "1" => Ok(Label::Artifact),
            other => Err(Error::Data(format!("unknown label `{other}`"))),
        }
    }
}

/// One normalized cardiac pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub values: Vec<f64>,
    pub source_span: (usize, usize),
    pub label: Option<Label>,
}

/// Output of the preprocessing pipeline for a single detected pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedPulse {
    pub span: (usize, usize),
    /// Filtered and resampled, before normalization (annotation statistics use these).
    pub resampled: Vec<f64>,
    pub pulse: Pulse,
}

/// Linear interpolation of `segment` onto 256 uniform positions spanning it.
pub fn resample_to_256(segment: &[f64]) -> Result<Vec<f64>> {
    resample_linear(segment, PULSE_LEN)
}

pub fn resample_linear(segment: &[f64], out_len: usize) -> Result<Vec<f64>> {
    let n = segment.len();
    if n < 2 {
        return Err(Error::SegmentTooShort { len: n });
    }
    let last = (n - 1) as f64;
    let denom = (out_len - 1) as f64;
    Ok((0..out_len)
        .map(|k| {
            let pos = k as f64 * last / denom;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            if frac == 0.0 {
                segment[i]
            } else if frac == 1.0 {
                segment[i + 1]
            } else {
                segment[i] + frac * (segment[i + 1] - segment[i])
            }
        })
        .collect())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean, unit population variance.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let (mean, std) = mean_std(values);
    if !(std > DEGENERATE_STD) {
        return Err(Error::DegeneratePulse { std });
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Filter, segment, resample and normalize one signal. Degenerate pulses are dropped.
pub fn preprocess_signal(signal: &RawSignal, spec: &FilterSpec) -> Result<Vec<ProcessedPulse>> {
    let filtered = bandpass_filtfilt(signal, spec)?;
    let mut out = Vec::new();
    for (start, end) in segment_pulses(&filtered) {
        let resampled = resample_to_256(&filtered.samples[start..end])?;
        let values = match normalize(&resampled) {
            Ok(v) => v,
            Err(Error::DegeneratePulse { .. }) => continue,
            Err(e) => return Err(e),
        };
        out.push(ProcessedPulse {
            span: (start, end),
            resampled,
            pulse: Pulse {
                values,
                source_span: (start, end),
                label: None,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_identity_at_256() {
        let x: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(resample_to_256(&x).unwrap(), x);
    }

    #[test]
    fn resample_ramp_is_ramp() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y = resample_to_256(&x).unwrap();
        assert_eq!(y.len(), 256);
        assert_eq!(y[0], 0.0);
        assert_eq!(y[255], 99.0);
        for (k, v) in y.iter().enumerate() {
            assert!((v - k as f64 * 99.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_short() {
        assert!(matches!(resample_to_256(&[1.0]), Err(Error::SegmentTooShort { len: 1 })));
        assert_eq!(resample_to_256(&[1.0, 3.0]).unwrap()[255], 3.0);
    }

    #[test]
    fn normalize_tiled_pattern() {
        let x: Vec<f64> = (0..256).map(|i| [0.0, 0.0, 2.0, 2.0][i % 4]).collect();
        let y = normalize(&x).unwrap();
        let (m, s) = mean_std(&y);
        assert!(m.abs() < 1e-9);
        assert!((s * s - 1.0).abs() < 1e-9);
        assert!(y.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn normalize_constant_is_degenerate() {
        assert!(matches!(normalize(&[3.0; 256]), Err(Error::DegeneratePulse { .. })));
    }

    #[test]
    fn normalize_is_idempotent() {
        let x: Vec<f64> = (0..256).map(|i| (i as f64 * 0.11).cos() * 5.0 + 2.0).collect();
        let a = normalize(&x).unwrap();
        let b = normalize(&a).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_signal_validation() {
        assert!(RawSignal::new(vec![], 128.0).is_err());
        assert!(RawSignal::new(vec![1.0], 0.0).is_err());
        assert!(RawSignal::new(vec![f64::INFINITY], 128.0).is_err());
    }
}
