//! Deterministic synthetic PPG corpus with per-pulse artifact ground truth.
//!
//! Each clean pulse is a two-lobe waveform (systolic peak plus dicrotic bump)
//! stretched to the current cycle length. A configurable fraction of pulses per
//! signal is corrupted with exactly one artifact kind.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::RawSignal;
use crate::error::{Error, Result};

/// Shortest and longest accepted cardiac cycle, in seconds.
pub const MIN_CYCLE_S: f64 = 0.3;
pub const MAX_CYCLE_S: f64 = 1.0;

const SYSTOLIC_POS: f64 = 0.30;
const SYSTOLIC_WIDTH: f64 = 0.08;
const DICROTIC_POS: f64 = 0.65;
const DICROTIC_AMP: f64 = 0.35;
const DICROTIC_WIDTH: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Spike,
    Dropout,
    NoiseBurst,
    Saturation,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::Spike,
        ArtifactKind::Dropout,
        ArtifactKind::NoiseBurst,
        ArtifactKind::Saturation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Spike => "spike",
            ArtifactKind::Dropout => "dropout",
            ArtifactKind::NoiseBurst => "noise_burst",
            ArtifactKind::Saturation => "saturation",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("artifact_kinds", format!("unknown artifact kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_signals: usize,
    pub duration_s: f64,
    pub fs: f64,
    /// Per-signal heart rate is drawn uniformly from this range (Hz).
    pub heart_rate_hz: [f64; 2],
    pub artifact_fraction: f64,
    pub artifact_kinds: Vec<ArtifactKind>,
    pub baseline_wander_amp: f64,
    pub baseline_wander_hz: f64,
    /// Uniform per-pulse cycle-length jitter, as a fraction of the base cycle.
    pub cycle_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_signals: 10,
            duration_s: 30.0,
            fs: 128.0,
            heart_rate_hz: [2.1, 2.6],
            artifact_fraction: 0.1,
            artifact_kinds: ArtifactKind::ALL.to_vec(),
            baseline_wander_amp: 0.3,
            baseline_wander_hz: 0.2,
            cycle_jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::config("fs", "fs > 0 required"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config("duration_s", "duration_s > 0 required"));
        }
        if !(0.0..=1.0).contains(&self.artifact_fraction) {
            return Err(Error::config(
                "artifact_fraction",
                "0 <= artifact_fraction <= 1 required",
            ));
        }
        let [lo, hi] = self.heart_rate_hz;
        let (hr_min, hr_max) = (1.0 / MAX_CYCLE_S, 1.0 / MIN_CYCLE_S);
        if !(lo <= hi && lo >= hr_min - 1e-12 && hi <= hr_max + 1e-12) {
            return Err(Error::config(
                "heart_rate_hz",
                format!("range must satisfy {hr_min} <= lo <= hi <= {hr_max:.4} Hz (0.3 s to 1 s cycles)"),
            ));
        }
        if !(0.0..0.5).contains(&self.cycle_jitter) {
            return Err(Error::config("cycle_jitter", "0 <= cycle_jitter < 0.5 required"));
        }
        if self.artifact_fraction > 0.0 && self.artifact_kinds.is_empty() {
            return Err(Error::config(
                "artifact_kinds",
                "at least one artifact kind is required when artifact_fraction > 0",
            ));
        }
        if !(self.baseline_wander_amp >= 0.0 && self.baseline_wander_amp.is_finite()) {
            return Err(Error::config("baseline_wander_amp", "must be finite and >= 0"));
        }
        if !(self.baseline_wander_hz >= 0.0 && self.baseline_wander_hz < self.fs / 2.0) {
            return Err(Error::config("baseline_wander_hz", "must lie in [0, fs/2)"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }
}

/// Per-signal pulse layout and artifact flags.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub onsets: Vec<usize>,
    /// Exclusive end index of each pulse; equals the next onset except for the last pulse.
    pub ends: Vec<usize>,
    pub flags: Vec<bool>,
    pub kinds: Vec<Option<ArtifactKind>>,
}

impl GroundTruth {
    pub fn n_pulses(&self) -> usize {
        self.onsets.len()
    }

    /// Index of the ground-truth pulse sharing the most samples with `[start, end)`.
    pub fn best_overlap(&self, start: usize, end: usize) -> Option<usize> {
        let mut best = None;
        let mut best_ov = 0usize;
        for (k, (&s, &e)) in self.onsets.iter().zip(&self.ends).enumerate() {
            let ov = end.min(e).saturating_sub(start.max(s));
            if ov > best_ov {
                best_ov = ov;
                best = Some(k);
            }
        }
        best
    }
}

/// Clean pulse template evaluated at cycle phase in [0, 1).
pub fn pulse_template(phase: f64) -> f64 {
    let g = |mu: f64, w: f64| (-(phase - mu).powi(2) / (2.0 * w * w)).exp();
    g(SYSTOLIC_POS, SYSTOLIC_WIDTH) + DICROTIC_AMP * g(DICROTIC_POS, DICROTIC_WIDTH)
}

/// Generate `n_signals` signals and their ground truth.
pub fn generate(config: &SynthConfig) -> Result<(Vec<RawSignal>, Vec<GroundTruth>)> {
    config.validate()?;
    let mut signals = Vec::with_capacity(config.n_signals);
    let mut truths = Vec::with_capacity(config.n_signals);
    for id in 0..config.n_signals {
        let mut rng = signal_rng(config.seed, id as u64);
        let (samples, truth) = generate_one(config, &mut rng);
        signals.push(RawSignal::new(samples, config.fs)?);
        truths.push(truth);
    }
    Ok((signals, truths))
}

fn signal_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate_one(config: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, GroundTruth) {
    let n = config.n_samples();
    let fs = config.fs;
    let [lo, hi] = config.heart_rate_hz;
    let hr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let base_cycle = fs / hr;
    let jitter = config.cycle_jitter;
    let next_cycle = |rng: &mut ChaCha8Rng| {
        if jitter > 0.0 {
            base_cycle * (1.0 + rng.random_range(-jitter..=jitter))
        } else {
            base_cycle
        }
    };

    // Cycle boundaries, starting one (partial) cycle before the window.
    let first = rng.random_range(0.0..base_cycle);
    let mut bounds = vec![first - next_cycle(rng), first];
    while *bounds.last().unwrap() < n as f64 {
        let last = *bounds.last().unwrap();
        bounds.push(last + next_cycle(rng));
    }

    let mut x = vec![0.0; n];
    let mut truth = GroundTruth {
        onsets: Vec::new(),
        ends: Vec::new(),
        flags: Vec::new(),
        kinds: Vec::new(),
    };
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let i0 = a.ceil().max(0.0) as usize;
        let i1 = (b.ceil().max(0.0) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(i1).skip(i0) {
            *v = pulse_template((i as f64 - a) / (b - a));
        }
        if a >= 0.0 && b <= n as f64 {
            truth.onsets.push(i0);
            truth.ends.push(i1);
        }
    }

    let n_pulses = truth.onsets.len();
    let n_bad = (config.artifact_fraction * n_pulses as f64).round() as usize;
    truth.flags = vec![false; n_pulses];
    truth.kinds = vec![None; n_pulses];
    let mut chosen = sample(rng, n_pulses, n_bad.min(n_pulses)).into_vec();
    chosen.sort_unstable();
    for k in chosen {
        let kind = config.artifact_kinds[rng.random_range(0..config.artifact_kinds.len())];
        apply_artifact(&mut x[truth.onsets[k]..truth.ends[k]], kind, rng);
        truth.flags[k] = true;
        truth.kinds[k] = Some(kind);
    }

    if config.baseline_wander_amp > 0.0 {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let w = std::f64::consts::TAU * config.baseline_wander_hz / fs;
        for (i, v) in x.iter_mut().enumerate() {
            *v += config.baseline_wander_amp * (w * i as f64 + phase).sin();
        }
    }
    (x, truth)
}

/// Corrupt one pulse span in place. Amplitudes are relative to the unit template peak.
pub fn apply_artifact(span: &mut [f64], kind: ArtifactKind, rng: &mut impl Rng) {
    let len = span.len();
    if len == 0 {
        return;
    }
    match kind {
        ArtifactKind::Spike => {
            let at = rng.random_range(0..len);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            span[at] += sign * rng.random_range(3.0..=6.0);
        }
        ArtifactKind::Dropout => {
            let width = ((rng.random_range(0.3..=0.6) * len as f64).round() as usize).clamp(1, len);
            let start = rng.random_range(0..=len - width);
            span[start..start + width].fill(0.0);
        }
        ArtifactKind::NoiseBurst => {
            let normal = Normal::new(0.0, 0.8).expect("valid sigma");
            for v in span.iter_mut() {
                *v += normal.sample(rng);
            }
        }
        ArtifactKind::Saturation => {
            let peak = span.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ceiling = 0.6 * peak;
            for v in span.iter_mut() {
                *v = v.min(ceiling);
            }
        }
    }
}

/// Signals CSV: one row per signal, `fs` followed by the samples. No header.
pub fn write_signals_csv(path: &Path, signals: &[RawSignal]) -> Result<()> {
    let mut out = String::new();
    for s in signals {
        out.push_str(&fmt_f64(s.fs));
        for v in &s.samples {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_signals_csv(path: &Path) -> Result<Vec<RawSignal>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut signals = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if vals.len() < 2 {
            return Err(Error::format(path, format!("line {}: no samples", lineno + 1)));
        }
        signals.push(RawSignal::new(vals[1..].to_vec(), vals[0])?);
    }
    Ok(signals)
}

/// Ground truth CSV: `signal_id,pulse_index,onset,flag,end`.
pub fn write_truth_csv(path: &Path, truths: &[GroundTruth]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("signal_id,pulse_index,onset,flag,end\n");
    for (sid, t) in truths.iter().enumerate() {
        for k in 0..t.n_pulses() {
            body.push_str(&format!(
                "{sid},{k},{},{},{}\n",
                t.onsets[k],
                u8::from(t.flags[k]),
                t.ends[k]
            ));
        }
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut truths: Vec<GroundTruth> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", lineno + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let num = |i: usize| cols[i].trim().parse::<usize>().map_err(|e| bad(&e.to_string()));
        let (sid, onset, flag, end) = (num(0)?, num(2)?, num(3)?, num(4)?);
        while truths.len() <= sid {
            truths.push(GroundTruth {
                onsets: vec![],
                ends: vec![],
                flags: vec![],
                kinds: vec![],
            });
        }
        let t = &mut truths[sid];
        t.onsets.push(onset);
        t.ends.push(end);
        t.flags.push(flag != 0);
        t.kinds.push(None);
    }
    Ok(truths)
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation.
    format!("{v:?}")
}
