//! R-peak detection: derivative-squared-moving-average energy with an
//! adaptive threshold, in the Pan-Tompkins style.

use crate::{Error, Result};

const INTEGRATION_WINDOW_S: f64 = 0.15;
const ROLLING_MAX_WINDOW_S: f64 = 2.0;
const REFRACTORY_S: f64 = 0.35;
/// Threshold as a fraction of the rolling energy maximum.
const THRESHOLD_FRACTION: f64 = 0.5;

/// Returns strictly increasing sample indices of detected R peaks.
/// An undetectable signal (flat, too short) yields an empty list.
pub fn detect_r_peaks(ecg: &[f64], sample_rate_hz: f64) -> Result<Vec<usize>> {
    if sample_rate_hz <= 0.0 {
        return Err(Error::Parameter("sample rate must be positive".into()));
    }
    let n = ecg.len();
    if (n as f64) < 2.0 * sample_rate_hz {
        return Err(Error::Parameter(format!(
            "ecg of {} samples shorter than 2 s at {sample_rate_hz} Hz",
            n
        )));
    }

    // Squared central difference, then a short moving-average integration.
    let mut energy = vec![0.0_f64; n];
    for i in 1..n - 1 {
        let d = ecg[i + 1] - ecg[i - 1];
        energy[i] = d * d;
    }
    let integ = moving_average(&energy, win(INTEGRATION_WINDOW_S, sample_rate_hz));

    // Adaptive threshold: half the rolling maximum over a 2 s neighborhood.
    let thr = rolling_max(&integ, win(ROLLING_MAX_WINDOW_S, sample_rate_hz));
    let refractory = win(REFRACTORY_S, sample_rate_hz);

    // Candidate regions where energy clears its local threshold; within each
    // region the peak is refined to the raw-signal maximum.
    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        if integ[i] > 0.0 && integ[i] >= THRESHOLD_FRACTION * thr[i] {
            let start = i;
            while i < n && integ[i] > 0.0 && integ[i] >= THRESHOLD_FRACTION * thr[i] {
                i += 1;
            }
            let end = i;
            let lo = start.saturating_sub(refractory / 4);
            let hi = (end + refractory / 4).min(n);
            let mut best = lo;
            for j in lo..hi {
                if ecg[j] > ecg[best] {
                    best = j;
                }
            }
            match peaks.last() {
                Some(&prev) if best.saturating_sub(prev) < refractory => {
                    // Within the refractory interval: keep the taller one.
                    if ecg[best] > ecg[prev] {
                        *peaks.last_mut().unwrap() = best;
                    }
                }
                _ => peaks.push(best),
            }
        } else {
            i += 1;
        }
    }
    Ok(peaks)
}

fn win(seconds: f64, rate: f64) -> usize {
    ((seconds * rate).round() as usize).max(1)
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let half = w / 2;
    let mut sum = 0.0;
    let mut lo = 0usize;
    let mut hi = 0usize; // exclusive
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

/// Sliding-window maximum over a centered window, via a monotonic deque.
fn rolling_max(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let half = w / 2;
    let mut out = vec![0.0; n];
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut hi = 0usize;
    for i in 0..n {
        let want_hi = (i + half + 1).min(n);
        while hi < want_hi {
            while let Some(&back) = deque.back() {
                if x[back] <= x[hi] {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(hi);
            hi += 1;
        }
        let want_lo = i.saturating_sub(half);
        while let Some(&front) = deque.front() {
            if front < want_lo {
                deque.pop_front();
            } else {
                break;
            }
        }
        out[i] = x[*deque.front().unwrap()];
    }
    out
}
