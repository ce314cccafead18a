//! Heatmap serialization for importance grids.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::{Error, Result};

/// Label for the pole negative Shapley values push toward. Negative phi moves
/// a window toward the CWS class, positive toward CWNS; exports carry both
/// labels so renderers agree on the color convention.
pub const NEGATIVE_POLE: &str = "CWS";
pub const POSITIVE_POLE: &str = "CWNS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Pgm,
    Json,
}

impl HeatmapFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(HeatmapFormat::Csv),
            "pgm" => Ok(HeatmapFormat::Pgm),
            "json" => Ok(HeatmapFormat::Json),
            other => Err(Error::Parameter(format!(
                "unknown heatmap format `{other}` (expected csv|pgm|json)"
            ))),
        }
    }
}

/// JSON heatmap payload: the grid plus a color scale symmetric around zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapJson {
    pub n_rows: usize,
    pub n_cols: usize,
    pub feature_names: Vec<String>,
    /// Row-major values, one row per 2 s segment.
    pub values: Vec<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    pub negative_pole: String,
    pub positive_pole: String,
}

fn check_grid(grid: &FeatureMatrix, names: &[String]) -> Result<()> {
    if names.len() != grid.n_cols {
        return Err(Error::shape(
            format!("{} column names", grid.n_cols),
            format!("{}", names.len()),
        ));
    }
    if let Some(bad) = grid.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("heatmap grid contains {bad}")));
    }
    Ok(())
}

/// Writes `grid` to `out`. CSV puts one segment per row under a header of
/// feature names. PGM stores |value| scaled to [0, 255] and writes the signs
/// to a companion `<out>.sign.csv`. JSON embeds the grid with symmetric scale
/// bounds and the sign convention.
pub fn export_heatmap(
    grid: &FeatureMatrix,
    names: &[String],
    out: &Path,
    format: HeatmapFormat,
) -> Result<()> {
    check_grid(grid, names)?;
    match format {
        HeatmapFormat::Csv => {
            let mut file = std::fs::File::create(out)?;
            writeln!(file, "{}", names.join(","))?;
            for r in 0..grid.n_rows {
                let row: Vec<String> = grid.row(r).iter().map(f64::to_string).collect();
                writeln!(file, "{}", row.join(","))?;
            }
        }
        HeatmapFormat::Pgm => {
            let max_abs = grid.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut file = std::fs::File::create(out)?;
            writeln!(file, "P2\n{} {}\n255", grid.n_cols, grid.n_rows)?;
            for r in 0..grid.n_rows {
                let pixels: Vec<String> = grid
                    .row(r)
                    .iter()
                    .map(|v| {
                        let p = if max_abs == 0.0 {
                            0
                        } else {
                            (v.abs() / max_abs * 255.0).round() as u32
                        };
                        p.to_string()
                    })
                    .collect();
                writeln!(file, "{}", pixels.join(" "))?;
            }
            let mut signs = std::fs::File::create(out.with_extension("sign.csv"))?;
            writeln!(signs, "{}", names.join(","))?;
            for r in 0..grid.n_rows {
                let row: Vec<String> = grid
                    .row(r)
                    .iter()
                    .map(|v| if *v > 0.0 { "1" } else if *v < 0.0 { "-1" } else { "0" }.into())
                    .collect();
                writeln!(signs, "{}", row.join(","))?;
            }
        }
        HeatmapFormat::Json => {
            let max_abs = grid.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let payload = HeatmapJson {
                n_rows: grid.n_rows,
                n_cols: grid.n_cols,
                feature_names: names.to_vec(),
                values: grid.data.clone(),
                scale_min: -max_abs,
                scale_max: max_abs,
                negative_pole: NEGATIVE_POLE.into(),
                positive_pole: POSITIVE_POLE.into(),
            };
            std::fs::write(out, serde_json::to_string_pretty(&payload)?)?;
        }
    }
    Ok(())
}

/// Reads a CSV written by [`export_heatmap`] back into a grid.
pub fn parse_heatmap_csv(path: &Path) -> Result<(FeatureMatrix, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty heatmap csv", path.display())))?;
    let names: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut data = Vec::new();
    let mut n_rows = 0;
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.parse::<f64>().map_err(|e| {
                    Error::Data(format!("{} line {}: {e}", path.display(), i + 2))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != names.len() {
            return Err(Error::shape(
                format!("{} columns", names.len()),
                format!("{} on line {}", row.len(), i + 2),
            ));
        }
        data.extend(row);
        n_rows += 1;
    }
    Ok((FeatureMatrix { n_rows, n_cols: names.len(), data }, names))
}
