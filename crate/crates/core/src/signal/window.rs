//! Window and segment extraction.

use super::{Condition, RawRecording, SEGMENT_HOP_S, SEGMENT_S, WINDOW_HOP_S, WINDOW_S};
use crate::{Error, Result};

/// A 20 s (by default) slice of all three channels.
#[derive(Debug, Clone)]
pub struct Window {
    pub participant_id: String,
    pub condition: Condition,
    pub start_s: f64,
    pub ecg: Vec<f64>,
    pub eda: Vec<f64>,
    pub rsp: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl Window {
    pub fn len(&self) -> usize {
        self.ecg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ecg.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// A 2 s slice of a window; consecutive segments overlap by 1 s.
#[derive(Debug, Clone)]
pub struct Segment {
    pub index: usize,
    /// Sample offset of this segment within its window.
    pub start: usize,
    pub ecg: Vec<f64>,
    pub eda: Vec<f64>,
    pub rsp: Vec<f64>,
    pub sample_rate_hz: f64,
}

/// Samples covering `seconds` at `rate`, rounded to the nearest integer.
pub fn sample_count(seconds: f64, rate: f64) -> usize {
    (seconds * rate).round() as usize
}

/// Cuts a recording into fixed-length windows. Partial trailing windows are
/// discarded.
pub fn extract_windows(recording: &RawRecording, win_s: f64, hop_s: f64) -> Result<Vec<Window>> {
    recording.validate()?;
    if win_s <= 0.0 || hop_s <= 0.0 {
        return Err(Error::Parameter(format!("win_s={win_s}, hop_s={hop_s} must be positive")));
    }
    let rate = recording.sample_rate_hz;
    let win = sample_count(win_s, rate);
    let hop = sample_count(hop_s, rate);
    let total = recording.ecg.len();
    if total < win {
        return Err(Error::Data(format!(
            "recording of {:.1} s shorter than one {win_s} s window",
            recording.duration_s()
        )));
    }
    let count = (total - win) / hop + 1;
    let mut windows = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        windows.push(Window {
            participant_id: recording.participant_id.clone(),
            condition: recording.condition,
            start_s: start as f64 / rate,
            ecg: recording.ecg[start..start + win].to_vec(),
            eda: recording.eda[start..start + win].to_vec(),
            rsp: recording.rsp[start..start + win].to_vec(),
            sample_rate_hz: rate,
        });
    }
    Ok(windows)
}

pub fn extract_windows_default(recording: &RawRecording) -> Result<Vec<Window>> {
    extract_windows(recording, WINDOW_S, WINDOW_HOP_S)
}

/// Cuts a window into overlapping segments; 19 of them for a 20 s window at
/// the 2 s / 1 s defaults.
pub fn segment_window(window: &Window, seg_s: f64, hop_s: f64) -> Result<Vec<Segment>> {
    if seg_s <= 0.0 || hop_s <= 0.0 {
        return Err(Error::Parameter(format!("seg_s={seg_s}, hop_s={hop_s} must be positive")));
    }
    let rate = window.sample_rate_hz;
    let seg = sample_count(seg_s, rate);
    let hop = sample_count(hop_s, rate);
    if seg > window.len() {
        return Err(Error::Parameter(format!(
            "segment of {seg_s} s longer than window of {:.1} s",
            window.duration_s()
        )));
    }
    let count = (window.len() - seg) / hop + 1;
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        segments.push(Segment {
            index: i,
            start,
            ecg: window.ecg[start..start + seg].to_vec(),
            eda: window.eda[start..start + seg].to_vec(),
            rsp: window.rsp[start..start + seg].to_vec(),
            sample_rate_hz: rate,
        });
    }
    Ok(segments)
}

pub fn segment_window_default(window: &Window) -> Result<Vec<Segment>> {
    segment_window(window, SEGMENT_S, SEGMENT_HOP_S)
}
