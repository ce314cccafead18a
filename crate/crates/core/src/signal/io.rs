//! Recording persistence: CSV sample files with a JSON metadata sidecar, and
//! a dataset manifest listing (metadata, csv) path pairs.

use super::{Condition, Group, RawRecording};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub participant_id: String,
    pub group: Group,
    pub condition: Condition,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub meta: PathBuf,
    pub csv: PathBuf,
}

pub type DatasetManifest = Vec<ManifestEntry>;

/// Writes `<stem>.csv` (header `t,ecg,eda,rsp`) and `<stem>.json` next to it,
/// returning the manifest entry.
pub fn save_recording(recording: &RawRecording, stem: &Path) -> Result<ManifestEntry> {
    recording.validate()?;
    let csv_path = stem.with_extension("csv");
    let meta_path = stem.with_extension("json");

    let mut w = BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(w, "t,ecg,eda,rsp")?;
    let dt = 1.0 / recording.sample_rate_hz;
    for i in 0..recording.ecg.len() {
        writeln!(
            w,
            "{},{},{},{}",
            i as f64 * dt,
            recording.ecg[i],
            recording.eda[i],
            recording.rsp[i]
        )?;
    }
    w.flush()?;

    let meta = RecordingMeta {
        participant_id: recording.participant_id.clone(),
        group: recording.group,
        condition: recording.condition,
        sample_rate_hz: recording.sample_rate_hz,
    };
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(ManifestEntry {
        meta: meta_path,
        csv: csv_path,
    })
}

pub fn load_recording(entry: &ManifestEntry) -> Result<RawRecording> {
    let meta: RecordingMeta = serde_json::from_str(&std::fs::read_to_string(&entry.meta)?)?;
    let file = std::fs::File::open(&entry.csv)?;
    let reader = BufReader::new(file);
    let mut ecg = Vec::new();
    let mut eda = Vec::new();
    let mut rsp = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "t,ecg,eda,rsp" {
                return Err(Error::Data(format!(
                    "{}: expected header `t,ecg,eda,rsp`, got `{line}`",
                    entry.csv.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            fields
                .next()
                .ok_or_else(|| Error::Data(format!("{}:{}: missing column {name}", entry.csv.display(), lineno + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("{}:{}: bad {name}: {e}", entry.csv.display(), lineno + 1)))
        };
        let _t = next("t")?;
        ecg.push(next("ecg")?);
        eda.push(next("eda")?);
        rsp.push(next("rsp")?);
    }
    let recording = RawRecording {
        participant_id: meta.participant_id,
        group: meta.group,
        condition: meta.condition,
        ecg,
        eda,
        rsp,
        sample_rate_hz: meta.sample_rate_hz,
    };
    recording.validate()?;
    Ok(recording)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RawRecording {
            participant_id: "cws_01".into(),
            group: Group::Cws,
            condition: Condition::Baseline,
            ecg: vec![0.5, -1.0, 2.25],
            eda: vec![3.5, 3.25, 3.125],
            rsp: vec![0.0, 1.0, -1.0],
            sample_rate_hz: 1250.0,
        };
        let entry = save_recording(&rec, &dir.path().join("cws_01_baseline")).unwrap();
        let loaded = load_recording(&entry).unwrap();
        assert_eq!(loaded.participant_id, rec.participant_id);
        assert_eq!(loaded.group, rec.group);
        assert_eq!(loaded.condition, rec.condition);
        assert_eq!(loaded.ecg, rec.ecg);
        assert_eq!(loaded.eda, rec.eda);
        assert_eq!(loaded.rsp, rec.rsp);
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("x.csv");
        let meta = dir.path().join("x.json");
        std::fs::write(&csv, "time,a,b,c\n0,1,2,3\n").unwrap();
        std::fs::write(
            &meta,
            r#"{"participant_id":"p","group":"CWS","condition":"task","sample_rate_hz":10.0}"#,
        )
        .unwrap();
        let entry = ManifestEntry { meta, csv };
        assert!(load_recording(&entry).is_err());
    }
}
