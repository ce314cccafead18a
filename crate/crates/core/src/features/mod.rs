//! Per-segment feature extraction: the 19x24 raw HLD grid, the 19x8
//! change-score grid, and the 19x24 conventional delta grid.

mod bagfile;
mod change;
mod hld;
mod lld;
mod peaks;

pub use bagfile::{load_bag_records, save_bag_records, BagRecord};
pub use change::{change_score, delta_change_score, ChangeScore};
pub use hld::{hld, HldVector, HLD_NAMES};
pub use lld::{extract_lld, hr_series, rsp_rate_amp, LldSeries};
pub use peaks::detect_r_peaks;

use crate::signal::{segment_window_default, Condition, Window, SEGMENTS_PER_WINDOW};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// The four physiological modalities, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Hr,
    Eda,
    RspAmp,
    RspRate,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Hr, Modality::Eda, Modality::RspAmp, Modality::RspRate];

    pub fn index(self) -> usize {
        match self {
            Modality::Hr => 0,
            Modality::Eda => 1,
            Modality::RspAmp => 2,
            Modality::RspRate => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Hr => "HR",
            Modality::Eda => "EDA",
            Modality::RspAmp => "RSP-amp",
            Modality::RspRate => "RSP-rate",
        }
    }
}

/// Which feature representation a grid carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Raw,
    Change,
    Delta,
}

impl FeatureMode {
    pub fn n_cols(self) -> usize {
        match self {
            FeatureMode::Raw | FeatureMode::Delta => 24,
            FeatureMode::Change => 8,
        }
    }

    /// Per-modality instance dimensionality when a grid is split by modality.
    pub fn modality_dim(self) -> usize {
        match self {
            FeatureMode::Raw | FeatureMode::Delta => 6,
            FeatureMode::Change => 2,
        }
    }

    /// Column range owned by `modality` in this mode's canonical layout.
    pub fn modality_columns(self, modality: Modality) -> std::ops::Range<usize> {
        let d = self.modality_dim();
        let start = modality.index() * d;
        start..start + d
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FeatureMode::Raw),
            "change" => Ok(FeatureMode::Change),
            "delta" => Ok(FeatureMode::Delta),
            other => Err(Error::Parameter(format!(
                "unknown feature mode `{other}` (expected raw|change|delta)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Raw => "raw",
            FeatureMode::Change => "change",
            FeatureMode::Delta => "delta",
        }
    }
}

/// A row-major feature grid: one row per 2 s segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        FeatureMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n_cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }
}

/// Canonical names of the 24 raw feature columns.
pub fn raw_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(24);
    for m in Modality::ALL {
        for f in HLD_NAMES {
            names.push(format!("{} {}", m.name(), f));
        }
    }
    names
}

/// Canonical names of the 8 change-score columns.
pub fn change_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(8);
    for m in Modality::ALL {
        names.push(format!("{} Cosine", m.name()));
        names.push(format!("{} Euclidean", m.name()));
    }
    names
}

pub fn delta_feature_names() -> Vec<String> {
    raw_feature_names().into_iter().map(|n| format!("{n} Delta")).collect()
}

pub fn feature_names(mode: FeatureMode) -> Vec<String> {
    match mode {
        FeatureMode::Raw => raw_feature_names(),
        FeatureMode::Change => change_feature_names(),
        FeatureMode::Delta => delta_feature_names(),
    }
}

/// Per-segment HLD vectors for all four modalities of one window.
fn window_hlds(window: &Window) -> Result<Vec<[HldVector; 4]>> {
    let lld = extract_lld(window)?;
    let segments = segment_window_default(window)?;
    let mut rows = Vec::with_capacity(segments.len());
    for seg in &segments {
        let span = seg.start..seg.start + seg.ecg.len();
        let row = [
            hld(&lld.hr[span.clone()]).map_err(|e| segment_err(seg.index, e))?,
            hld(&lld.eda[span.clone()]).map_err(|e| segment_err(seg.index, e))?,
            hld(&lld.rsp_amp[span.clone()]).map_err(|e| segment_err(seg.index, e))?,
            hld(&lld.rsp_rate[span]).map_err(|e| segment_err(seg.index, e))?,
        ];
        rows.push(row);
    }
    Ok(rows)
}

fn segment_err(index: usize, e: Error) -> Error {
    Error::Data(format!("segment {index}: {e}"))
}

/// Extracts the 19x24 raw HLD feature grid for one window.
pub fn raw_features(window: &Window) -> Result<FeatureMatrix> {
    let rows = window_hlds(window)?;
    let mut grid = FeatureMatrix::zeros(rows.len(), 24);
    for (r, row) in rows.iter().enumerate() {
        for (m, h) in row.iter().enumerate() {
            let a = h.as_array();
            for (f, &v) in a.iter().enumerate() {
                grid.set(r, m * 6 + f, v);
            }
        }
    }
    Ok(grid)
}

/// Participant baseline: mean HLD 6-vector per modality over every
/// baseline-condition segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineScore {
    pub participant_id: String,
    /// Indexed by [`Modality::index`].
    pub per_modality: [HldVector; 4],
}

/// Folds all baseline windows' segments into the participant baseline score.
pub fn baseline_score(windows: &[Window]) -> Result<BaselineScore> {
    let mut acc = [[0.0; 6]; 4];
    let mut count = 0usize;
    let mut participant_id: Option<String> = None;
    for w in windows {
        if w.condition != Condition::Baseline {
            return Err(Error::Parameter(format!(
                "baseline score requires baseline-condition windows, got {:?} at {:.1} s",
                w.condition, w.start_s
            )));
        }
        match &participant_id {
            None => participant_id = Some(w.participant_id.clone()),
            Some(id) if *id != w.participant_id => {
                return Err(Error::Parameter(format!(
                    "baseline windows from multiple participants: {id} vs {}",
                    w.participant_id
                )))
            }
            _ => {}
        }
        for row in window_hlds(w)? {
            for (m, h) in row.iter().enumerate() {
                let a = h.as_array();
                for (f, &v) in a.iter().enumerate() {
                    acc[m][f] += v;
                }
            }
            count += 1;
        }
    }
    let participant_id =
        participant_id.ok_or_else(|| Error::Parameter("no baseline windows provided".into()))?;
    if count == 0 {
        return Err(Error::Data("no baseline segments".into()));
    }
    let per_modality = acc.map(|sums| {
        HldVector::from_array([
            sums[0] / count as f64,
            sums[1] / count as f64,
            sums[2] / count as f64,
            sums[3] / count as f64,
            sums[4] / count as f64,
            sums[5] / count as f64,
        ])
    });
    Ok(BaselineScore {
        participant_id,
        per_modality,
    })
}

/// Extracts the 19x8 change-score grid: per segment, per modality, the
/// (cosine, euclidean) pair against that modality's baseline vector.
pub fn change_score_matrix(window: &Window, baseline: &BaselineScore) -> Result<FeatureMatrix> {
    if window.participant_id != baseline.participant_id {
        return Err(Error::Parameter(format!(
            "baseline of participant {} used for window of {}",
            baseline.participant_id, window.participant_id
        )));
    }
    let rows = window_hlds(window)?;
    let mut grid = FeatureMatrix::zeros(rows.len(), 8);
    for (r, row) in rows.iter().enumerate() {
        for (m, post) in row.iter().enumerate() {
            let cs = change_score(post, &baseline.per_modality[m]);
            grid.set(r, m * 2, cs.cosine);
            grid.set(r, m * 2 + 1, cs.euclid);
        }
    }
    Ok(grid)
}

/// Extracts the 19x24 conventional delta grid (`post - baseline`, elementwise).
pub fn delta_feature_matrix(window: &Window, baseline: &BaselineScore) -> Result<FeatureMatrix> {
    if window.participant_id != baseline.participant_id {
        return Err(Error::Parameter(format!(
            "baseline of participant {} used for window of {}",
            baseline.participant_id, window.participant_id
        )));
    }
    let rows = window_hlds(window)?;
    let mut grid = FeatureMatrix::zeros(rows.len(), 24);
    for (r, row) in rows.iter().enumerate() {
        for (m, post) in row.iter().enumerate() {
            let d = delta_change_score(post, &baseline.per_modality[m]);
            for (f, &v) in d.iter().enumerate() {
                grid.set(r, m * 6 + f, v);
            }
        }
    }
    Ok(grid)
}

/// Extracts the grid for `mode`. Raw mode ignores the baseline.
pub fn featurize_window(
    window: &Window,
    mode: FeatureMode,
    baseline: Option<&BaselineScore>,
) -> Result<FeatureMatrix> {
    match mode {
        FeatureMode::Raw => raw_features(window),
        FeatureMode::Change => {
            let b = baseline.ok_or_else(|| missing_baseline(window))?;
            change_score_matrix(window, b)
        }
        FeatureMode::Delta => {
            let b = baseline.ok_or_else(|| missing_baseline(window))?;
            delta_feature_matrix(window, b)
        }
    }
}

fn missing_baseline(window: &Window) -> Error {
    Error::Data(format!(
        "no baseline score for participant {}",
        window.participant_id
    ))
}

/// Sanity bound used by callers: a full-length window always yields this many
/// rows.
pub const EXPECTED_ROWS: usize = SEGMENTS_PER_WINDOW;

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::signal::Condition;

    /// Synthesizes a window with a known HR (Gaussian-bump ECG train), a
    /// fixed EDA level, and a sinusoidal respiration trace.
    pub(crate) fn synthetic_window(hr_bpm: f64, eda_level: f64, rsp_period_s: f64) -> Window {
        let fs = 250.0;
        let n = (20.0 * fs) as usize;
        let mut ecg = vec![0.0; n];
        let period = (60.0 / hr_bpm * fs) as usize;
        let mut k = period / 2;
        while k + 10 < n {
            for j in 0..21 {
                let d = j as f64 - 10.0;
                ecg[k + j - 10] += (-d * d / 8.0).exp();
            }
            k += period;
        }
        let rsp: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / (rsp_period_s * fs)).sin())
            .collect();
        Window {
            participant_id: "p0".into(),
            condition: Condition::Task,
            start_s: 0.0,
            ecg,
            eda: vec![eda_level; n],
            rsp,
            sample_rate_hz: fs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::synthetic_window;
    use super::*;
    use crate::signal::Condition;

    #[test]
    fn raw_grid_shape_and_hr_column() {
        let w = synthetic_window(120.0, 4.0, 3.0);
        let grid = raw_features(&w).unwrap();
        assert_eq!((grid.n_rows, grid.n_cols), (19, 24));
        // HR mean column (index 0) should sit near the planted 120 bpm.
        for r in 0..19 {
            assert!((grid.get(r, 0) - 120.0).abs() < 3.0, "row {r}: {}", grid.get(r, 0));
        }
        // Constant EDA: var and std columns are 0.
        for r in 0..19 {
            assert_eq!(grid.get(r, 6 + 4), 0.0);
            assert_eq!(grid.get(r, 6 + 5), 0.0);
        }
    }

    #[test]
    fn raw_features_deterministic() {
        let w = synthetic_window(100.0, 2.0, 4.0);
        let a = raw_features(&w).unwrap();
        let b = raw_features(&w).unwrap();
        assert_eq!(a, b);
    }

    fn baseline_windows() -> Vec<Window> {
        let mut w = synthetic_window(100.0, 3.0, 3.0);
        w.condition = Condition::Baseline;
        vec![w]
    }

    #[test]
    fn change_grid_shape_and_self_similarity() {
        let base = baseline_score(&baseline_windows()).unwrap();
        let mut w = synthetic_window(100.0, 3.0, 3.0);
        w.condition = Condition::Baseline;
        let grid = change_score_matrix(&w, &base).unwrap();
        assert_eq!((grid.n_rows, grid.n_cols), (19, 8));
        for r in 0..19 {
            for m in 0..4 {
                let cos = grid.get(r, m * 2);
                let euc = grid.get(r, m * 2 + 1);
                assert!((-1.0..=1.0).contains(&cos));
                assert!(euc >= 0.0);
                // Same carrier as the baseline: cosine near 1.
                assert!(cos > 0.95, "row {r} modality {m}: cos={cos}");
            }
        }
    }

    #[test]
    fn change_rejects_participant_mismatch() {
        let base = baseline_score(&baseline_windows()).unwrap();
        let mut w = synthetic_window(100.0, 3.0, 3.0);
        w.participant_id = "other".into();
        assert!(change_score_matrix(&w, &base).is_err());
    }

    #[test]
    fn delta_of_baseline_window_is_small() {
        let base = baseline_score(&baseline_windows()).unwrap();
        let mut w = synthetic_window(100.0, 3.0, 3.0);
        w.condition = Condition::Baseline;
        let grid = delta_feature_matrix(&w, &base).unwrap();
        assert_eq!((grid.n_rows, grid.n_cols), (19, 24));
        // EDA mean delta (column 6) should be ~0 for identical carriers.
        for r in 0..19 {
            assert!(grid.get(r, 6).abs() < 1e-9);
        }
    }

    #[test]
    fn windows_shorter_rsp_cycle_errors_bubble_up() {
        let mut w = synthetic_window(100.0, 3.0, 3.0);
        w.rsp = vec![0.0; w.rsp.len()];
        assert!(raw_features(&w).is_err());
    }

    #[test]
    fn name_tables_match_column_counts() {
        assert_eq!(raw_feature_names().len(), 24);
        assert_eq!(change_feature_names().len(), 8);
        assert_eq!(delta_feature_names().len(), 24);
        assert_eq!(raw_feature_names()[0], "HR Mean");
        assert_eq!(raw_feature_names()[6], "EDA Mean");
        assert_eq!(change_feature_names()[1], "HR Euclidean");
    }
}
