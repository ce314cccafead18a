//! Raw recordings, drift removal, and the window/segment hierarchy.
//!
//! A recording carries three aligned channels (ECG, EDA, RSP) sampled at a
//! common rate. Recordings are cut into 20 s windows with a 15 s hop, and
//! each window into nineteen 2 s segments with a 1 s hop. All operations are
//! pure functions of their inputs.

mod filter;
mod io;
mod window;

pub use filter::{butterworth_highpass_magnitude, highpass_filter, HighpassFilter};
pub use io::{
    load_manifest, load_recording, save_manifest, save_recording, DatasetManifest, ManifestEntry,
    RecordingMeta,
};
pub use window::{
    extract_windows, extract_windows_default, sample_count, segment_window,
    segment_window_default, Segment, Window,
};

use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 1250.0;
pub const WINDOW_S: f64 = 20.0;
pub const WINDOW_HOP_S: f64 = 15.0;
pub const SEGMENT_S: f64 = 2.0;
pub const SEGMENT_HOP_S: f64 = 1.0;
/// Segments per window at the defaults above.
pub const SEGMENTS_PER_WINDOW: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "CWS")]
    Cws,
    #[serde(rename = "CWNS")]
    Cwns,
}

impl Group {
    /// CWS is the positive class (label 1).
    pub fn label(self) -> u8 {
        match self {
            Group::Cws => 1,
            Group::Cwns => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Task,
}

/// One participant's multi-channel recording under a single condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecording {
    pub participant_id: String,
    pub group: Group,
    pub condition: Condition,
    pub ecg: Vec<f64>,
    pub eda: Vec<f64>,
    pub rsp: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl RawRecording {
    pub fn validate(&self) -> crate::Result<()> {
        if self.sample_rate_hz <= 0.0 {
            return Err(crate::Error::Parameter(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.ecg.len() != self.eda.len() || self.ecg.len() != self.rsp.len() {
            return Err(crate::Error::Data(format!(
                "channel lengths differ: ecg={}, eda={}, rsp={}",
                self.ecg.len(),
                self.eda.len(),
                self.rsp.len()
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.ecg.len() as f64 / self.sample_rate_hz
    }

    /// Applies the drift-removal high-pass to all three channels in place.
    pub fn remove_drift(&mut self, cutoff_hz: f64, order: usize) -> crate::Result<()> {
        self.ecg = highpass_filter(&self.ecg, self.sample_rate_hz, cutoff_hz, order)?;
        self.eda = highpass_filter(&self.eda, self.sample_rate_hz, cutoff_hz, order)?;
        self.rsp = highpass_filter(&self.rsp, self.sample_rate_hz, cutoff_hz, order)?;
        Ok(())
    }
}

/// Default drift-removal cutoff. Low enough to keep EDA tonic dynamics.
pub const DRIFT_CUTOFF_HZ: f64 = 0.05;
pub const DRIFT_FILTER_ORDER: usize = 2;
