//! Local-minima pulse segmentation.

use super::RawSignal;

/// Accepted pulse duration, seconds.
pub const MIN_PULSE_S: f64 = 0.25;
pub const MAX_PULSE_S: f64 = 1.25;
/// Width of the centered window a minimum must dominate, and the refractory gap.
pub const MINIMUM_WINDOW_S: f64 = 0.25;

/// Indices that are the strict minimum of a centered `MINIMUM_WINDOW_S` window
/// and at least that far after the previously accepted minimum. Windows must
/// fit inside the signal, so endpoints are never minima.
pub fn local_minima(samples: &[f64], fs: f64) -> Vec<usize> {
    let window = (MINIMUM_WINDOW_S * fs).round() as usize;
    let half = window / 2;
    let n = samples.len();
    let mut minima: Vec<usize> = Vec::new();
    if n < 2 * half + 1 {
        return minima;
    }
    for i in half..n - half {
        let v = samples[i];
        let strict = (i - half..=i + half).all(|j| j == i || samples[j] > v);
        if !strict {
            continue;
        }
        if let Some(&prev) = minima.last() {
            if i - prev < window {
                continue;
            }
        }
        minima.push(i);
    }
    minima
}

/// Half-open spans `[start, end)` between consecutive minima whose duration is
/// within `[MIN_PULSE_S, MAX_PULSE_S]`.
pub fn segment_pulses(signal: &RawSignal) -> Vec<(usize, usize)> {
    let fs = signal.fs;
    let lo = MIN_PULSE_S * fs;
    let hi = MAX_PULSE_S * fs;
    local_minima(&signal.samples, fs)
        .windows(2)
        .filter_map(|w| {
            let len = (w[1] - w[0]) as f64;
            (len >= lo - 1e-9 && len <= hi + 1e-9).then_some((w[0], w[1]))
        })
        .collect()
}
