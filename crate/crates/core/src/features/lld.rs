//! Low-level descriptor series: HR from R peaks, EDA passthrough, and
//! respiration rate/amplitude from breath peaks and troughs.
//!
//! Rate-like LLDs are held piecewise constant between the events that define
//! them and resampled onto the signal grid (sample-and-hold), so every LLD
//! series has the same length as its source channel.

use super::peaks::detect_r_peaks;
use crate::signal::Window;
use crate::{Error, Result};

/// The four LLD series of one window, all at the window's sample grid.
#[derive(Debug, Clone)]
pub struct LldSeries {
    pub hr: Vec<f64>,
    pub eda: Vec<f64>,
    pub rsp_rate: Vec<f64>,
    pub rsp_amp: Vec<f64>,
}

/// Converts R-peak indices into a piecewise-constant bpm series of `out_len`
/// samples. HR over `[peak_i, peak_{i+1})` is `60 / RR_i`; the first interval
/// value extends to the start, the last to the end.
///
/// RR intervals outside [0.6, 1.67] x the median RR are treated as detection
/// artifacts (cut-off beats at window edges, missed or doubled peaks) and
/// take the nearest plausible interval's rate instead — loose enough that a
/// genuine 20 bpm deceleration passes untouched.
pub fn hr_series(peaks: &[usize], sample_rate_hz: f64, out_len: usize) -> Result<Vec<f64>> {
    if peaks.len() < 2 {
        return Err(Error::Data(
            "fewer than two R peaks: fall back to the previous segment's final HR".into(),
        ));
    }
    let rr: Vec<f64> =
        peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / sample_rate_hz).collect();
    let median = {
        let mut sorted = rr.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = sorted.len() / 2;
        if sorted.len() % 2 == 0 { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] }
    };
    let plausible: Vec<bool> =
        rr.iter().map(|&r| r >= 0.6 * median && r <= 1.67 * median).collect();
    let mut bpm: Vec<f64> = rr.iter().map(|&r| 60.0 / r).collect();
    for i in 0..bpm.len() {
        if !plausible[i] {
            // The median interval is always plausible, so a donor exists.
            let donor = (0..bpm.len())
                .filter(|&j| plausible[j])
                .min_by_key(|&j| j.abs_diff(i))
                .expect("median RR interval is plausible");
            bpm[i] = bpm[donor];
        }
    }

    let mut out = vec![0.0; out_len];
    let mut interval = 0usize; // index into peaks for the current RR interval
    for (n, slot) in out.iter_mut().enumerate() {
        while interval + 2 < peaks.len() && n >= peaks[interval + 1] {
            interval += 1;
        }
        *slot = bpm[interval];
    }
    Ok(out)
}

/// Breath events located on a respiration trace.
struct BreathEvents {
    /// Inhalation-peak sample indices.
    peaks: Vec<usize>,
    /// Trough indices, interleaved with peaks.
    troughs: Vec<usize>,
}

fn find_breath_events(rsp: &[f64], sample_rate_hz: f64) -> Option<BreathEvents> {
    let n = rsp.len();
    // Smooth for event detection; amplitudes are later read off the raw trace.
    let smooth_w = ((0.3 * sample_rate_hz).round() as usize).max(1);
    let smoothed = moving_average(rsp, smooth_w);

    let mean = smoothed.iter().sum::<f64>() / n as f64;
    let sd = (smoothed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    if sd < 1e-9 {
        return None; // flat trace, no breathing cycle
    }
    let prominence = 0.25 * sd;

    // Alternating extremum walk: track running extremes, emit an event when
    // the trace retreats from an extreme by more than the prominence.
    let mut peaks = Vec::new();
    let mut troughs = Vec::new();
    let mut looking_for_peak = true;
    let mut ext_idx = 0usize;
    for i in 1..n {
        if looking_for_peak {
            if smoothed[i] > smoothed[ext_idx] {
                ext_idx = i;
            } else if smoothed[ext_idx] - smoothed[i] > prominence {
                peaks.push(refine_extremum(rsp, ext_idx, sample_rate_hz, true));
                looking_for_peak = false;
                ext_idx = i;
            }
        } else if smoothed[i] < smoothed[ext_idx] {
            ext_idx = i;
        } else if smoothed[i] - smoothed[ext_idx] > prominence {
            troughs.push(refine_extremum(rsp, ext_idx, sample_rate_hz, false));
            looking_for_peak = true;
            ext_idx = i;
        }
    }
    if peaks.is_empty() || troughs.is_empty() {
        return None;
    }
    Some(BreathEvents { peaks, troughs })
}

fn refine_extremum(raw: &[f64], idx: usize, sample_rate_hz: f64, maximum: bool) -> usize {
    let half = ((0.2 * sample_rate_hz).round() as usize).max(1);
    let lo = idx.saturating_sub(half);
    let hi = (idx + half + 1).min(raw.len());
    let mut best = idx;
    for j in lo..hi {
        let better = if maximum { raw[j] > raw[best] } else { raw[j] < raw[best] };
        if better {
            best = j;
        }
    }
    best
}

/// Extracts respiration rate (breaths/min) and amplitude (peak minus the
/// preceding trough) as sample-and-hold series over the input grid.
pub fn rsp_rate_amp(rsp: &[f64], sample_rate_hz: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let events = find_breath_events(rsp, sample_rate_hz).ok_or_else(|| {
        Error::Data("no breathing cycle detected: fall back to the surrounding window's estimate".into())
    })?;
    if events.peaks.len() < 2 {
        return Err(Error::Data(
            "fewer than two inhalation peaks: fall back to the surrounding window's estimate".into(),
        ));
    }
    let n = rsp.len();

    // Rate: 60 / period between successive inhalation peaks, held over the
    // interval that period spans.
    let rate = {
        let peaks = &events.peaks;
        let mut out = vec![0.0; n];
        let mut interval = 0usize;
        for (i, slot) in out.iter_mut().enumerate() {
            while interval + 2 < peaks.len() && i >= peaks[interval + 1] {
                interval += 1;
            }
            let period = (peaks[interval + 1] - peaks[interval]) as f64 / sample_rate_hz;
            *slot = 60.0 / period;
        }
        out
    };

    // Amplitude: excursion from each peak down to its preceding trough (the
    // first peak borrows the earliest trough if none precedes it).
    let amp = {
        let mut values = Vec::with_capacity(events.peaks.len());
        for &p in &events.peaks {
            let trough = events
                .troughs
                .iter()
                .copied()
                .filter(|&t| t < p)
                .last()
                .unwrap_or(events.troughs[0]);
            values.push(rsp[p] - rsp[trough]);
        }
        let mut out = vec![0.0; n];
        let mut k = 0usize;
        for (i, slot) in out.iter_mut().enumerate() {
            while k + 1 < events.peaks.len() && i >= events.peaks[k + 1] {
                k += 1;
            }
            *slot = values[k];
        }
        out
    };

    Ok((rate, amp))
}

/// Extracts all four LLD series for one window.
pub fn extract_lld(window: &Window) -> Result<LldSeries> {
    let rate = window.sample_rate_hz;
    let peaks = detect_r_peaks(&window.ecg, rate)?;
    let hr = hr_series(&peaks, rate, window.len())
        .map_err(|e| Error::Data(format!("window at {:.1} s: {e}", window.start_s)))?;
    let (rsp_rate, rsp_amp) = rsp_rate_amp(&window.rsp, rate)
        .map_err(|e| Error::Data(format!("window at {:.1} s: {e}", window.start_s)))?;
    Ok(LldSeries {
        hr,
        eda: window.eda.clone(),
        rsp_rate,
        rsp_amp,
    })
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let half = w / 2;
    let mut sum = 0.0;
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        let want_lo = i.saturating_sub(half);
        let want_hi = (i + half + 1).min(n);
        while hi < want_hi {
            sum += x[hi];
            hi += 1;
        }
        while lo < want_lo {
            sum -= x[lo];
            lo += 1;
        }
        out[i] = sum / (hi - lo) as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hr_from_regular_peaks() {
        let fs = 1250.0;
        let peaks: Vec<usize> = (0..10).map(|i| i * 625).collect(); // every 0.5 s
        let hr = hr_series(&peaks, fs, 6250).unwrap();
        assert!(hr.iter().all(|&v| (v - 120.0).abs() < 1e-9));

        let peaks: Vec<usize> = (0..6).map(|i| i * 1250).collect(); // every 1.0 s
        let hr = hr_series(&peaks, fs, 6250).unwrap();
        assert!(hr.iter().all(|&v| (v - 60.0).abs() < 1e-9));
    }

    #[test]
    fn hr_steps_between_intervals() {
        let fs = 1000.0;
        // RR = 0.5 s then 1.0 s
        let peaks = vec![0, 500, 1500];
        let hr = hr_series(&peaks, fs, 1500).unwrap();
        assert!((hr[100] - 120.0).abs() < 1e-9);
        assert!((hr[499] - 120.0).abs() < 1e-9);
        assert!((hr[500] - 60.0).abs() < 1e-9);
        assert!((hr[1400] - 60.0).abs() < 1e-9);
    }

    #[test]
    fn hr_needs_two_peaks() {
        assert!(hr_series(&[100], 1000.0, 500).is_err());
    }

    fn sine(period_s: f64, amplitude: f64, seconds: f64, fs: f64) -> Vec<f64> {
        let n = (seconds * fs) as usize;
        (0..n)
            .map(|i| amplitude * (2.0 * std::f64::consts::PI * i as f64 / (period_s * fs)).sin())
            .collect()
    }

    #[test]
    fn sine_rate_and_amplitude() {
        let fs = 250.0;
        let rsp = sine(3.0, 1.0, 30.0, fs);
        let (rate, amp) = rsp_rate_amp(&rsp, fs).unwrap();
        let mid = rate.len() / 2;
        assert!((rate[mid] - 20.0).abs() / 20.0 < 0.05, "rate={}", rate[mid]);
        assert!((amp[mid] - 2.0).abs() / 2.0 < 0.05, "amp={}", amp[mid]);

        let rsp = sine(4.0, 0.5, 40.0, fs);
        let (rate, amp) = rsp_rate_amp(&rsp, fs).unwrap();
        let mid = rate.len() / 2;
        assert!((rate[mid] - 15.0).abs() / 15.0 < 0.05, "rate={}", rate[mid]);
        assert!((amp[mid] - 1.0).abs() / 1.0 < 0.05, "amp={}", amp[mid]);
    }

    #[test]
    fn constant_rsp_errors() {
        let rsp = vec![2.0; 2000];
        assert!(rsp_rate_amp(&rsp, 250.0).is_err());
    }
}
