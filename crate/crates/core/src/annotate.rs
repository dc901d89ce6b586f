//! Statistical auto-annotation of pulses.
//!
//! Each pulse is summarised by kurtosis, skewness and standard deviation
//! (population central moments). Within one signal, a band `mu +/- 2 sigma` is
//! built per statistic over that signal's pulses; a pulse is an artifact iff any
//! of its statistics falls strictly outside its band.

use std::path::Path;

use crate::dsp::{Label, DEGENERATE_STD};
use crate::error::{Error, Result};
use crate::synthgen::fmt_f64;

/// Minimum number of pulses needed to form bands for one signal.
pub const MIN_PULSES_PER_SIGNAL: usize = 3;
/// Band half-width in standard deviations.
pub const BAND_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseStats {
    pub kurtosis: f64,
    pub skewness: f64,
    pub std: f64,
}

impl PulseStats {
    pub fn get(&self, stat: StatName) -> f64 {
        match stat {
            StatName::Kurtosis => self.kurtosis,
            StatName::Skewness => self.skewness,
            StatName::Std => self.std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatName {
    Kurtosis,
    Skewness,
    Std,
}

impl StatName {
    pub const ALL: [StatName; 3] = [StatName::Kurtosis, StatName::Skewness, StatName::Std];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdBand {
    pub stat: StatName,
    pub mu: f64,
    pub sigma: f64,
    pub th_l: f64,
    pub th_u: f64,
}

impl ThresholdBand {
    pub fn from_values(stat: StatName, values: &[f64]) -> Self {
        let (mu, sigma) = crate::dsp::mean_std(values);
        Self {
            stat,
            mu,
            sigma,
            th_l: mu - BAND_SIGMAS * sigma,
            th_u: mu + BAND_SIGMAS * sigma,
        }
    }

    /// Inclusive at both thresholds.
    pub fn contains(&self, v: f64) -> bool {
        v >= self.th_l && v <= self.th_u
    }
}

pub fn pulse_stats(values: &[f64]) -> Result<PulseStats> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    if !(std > DEGENERATE_STD) {
        return Err(Error::DegeneratePulse { std });
    }
    Ok(PulseStats {
        kurtosis: m4 / (m2 * m2),
        skewness: m3 / (m2 * std),
        std,
    })
}

/// Annotation result for one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalAnnotation {
    pub stats: Vec<PulseStats>,
    pub bands: [ThresholdBand; 3],
    pub labels: Vec<Label>,
}

/// Label every pulse of one signal against that signal's own bands.
pub fn annotate_signal<P: AsRef<[f64]>>(signal_id: u32, pulses: &[P]) -> Result<SignalAnnotation> {
    if pulses.len() < MIN_PULSES_PER_SIGNAL {
        return Err(Error::Annotation {
            signal_id,
            message: format!(
                "{} pulses; at least {MIN_PULSES_PER_SIGNAL} are needed to form bands",
                pulses.len()
            ),
        });
    }
    let stats = pulses
        .iter()
        .map(|p| pulse_stats(p.as_ref()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Annotation {
            signal_id,
            message: e.to_string(),
        })?;
    let (bands, labels) = label_from_stats(&stats);
    Ok(SignalAnnotation { stats, bands, labels })
}

/// Bands over `stats` and the resulting label of each entry.
pub fn label_from_stats(stats: &[PulseStats]) -> ([ThresholdBand; 3], Vec<Label>) {
    let bands = StatName::ALL.map(|stat| {
        let column: Vec<f64> = stats.iter().map(|s| s.get(stat)).collect();
        ThresholdBand::from_values(stat, &column)
    });
    let labels = stats
        .iter()
        .map(|s| {
            if bands.iter().all(|b| b.contains(s.get(b.stat))) {
                Label::Clean
            } else {
                Label::Artifact
            }
        })
        .collect();
    (bands, labels)
}

/// Annotate every signal independently; one result per signal.
pub fn auto_annotate<P: AsRef<[f64]>>(groups: &[Vec<P>]) -> Vec<Result<SignalAnnotation>> {
    groups
        .iter()
        .enumerate()
        .map(|(sid, pulses)| annotate_signal(sid as u32, pulses))
        .collect()
}

/// One row of the label CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub signal_id: u32,
    pub pulse_index: u32,
    pub label: Label,
    pub stats: PulseStats,
}

/// Label CSV: `signal_id,pulse_index,label,kurtosis,skewness,std`.
pub fn write_labels_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut out = String::from("signal_id,pulse_index,label,kurtosis,skewness,std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.signal_id,
            r.pulse_index,
            r.label,
            fmt_f64(r.stats.kurtosis),
            fmt_f64(r.stats.skewness),
            fmt_f64(r.stats.std)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
