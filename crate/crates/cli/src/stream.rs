//! Streaming inference: one JSON object per input line, one per output line,
//! order preserved, flushed after every line so downstream consumers see each
//! window the moment it is scored.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use mimil_core::features::{FeatureMode, EXPECTED_ROWS};
use mimil_core::models::{Bag, TrainedModel};
use mimil_core::signal::Condition;
use mimil_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Args)]
pub struct StreamArgs {
    /// Model file stem (the path without the `.miml`/`.json` extension).
    #[arg(long)]
    pub model: PathBuf,
    /// Listen on a TCP address and serve the line protocol to one client
    /// instead of using stdin/stdout.
    #[arg(long)]
    pub stream_tcp: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamInput {
    window_id: String,
    feature_mode: String,
    /// 19 rows of D feature values.
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct StreamOutput<'a> {
    window_id: &'a str,
    probability: f64,
    predicted: u8,
    attentions: &'a [Vec<f64>],
    latency_s: f64,
}

#[derive(Serialize)]
struct StreamError {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    window_id: Option<String>,
}

fn score_line(model: &TrainedModel, line: &str) -> Result<String> {
    let input: StreamInput =
        serde_json::from_str(line).map_err(|e| Error::Data(format!("bad input line: {e}")))?;
    let mode = FeatureMode::parse(&input.feature_mode)?;
    if input.matrix.len() != EXPECTED_ROWS {
        return Err(Error::shape(
            format!("{EXPECTED_ROWS} instance rows"),
            format!("{} in window {}", input.matrix.len(), input.window_id),
        ));
    }
    let n_cols = mode.n_cols();
    let mut flat = Vec::with_capacity(EXPECTED_ROWS * n_cols);
    for row in &input.matrix {
        if row.len() != n_cols {
            return Err(Error::shape(
                format!("{n_cols} columns for {} mode", mode.as_str()),
                format!("{} in window {}", row.len(), input.window_id),
            ));
        }
        flat.extend_from_slice(row);
    }
    let record = mimil_core::features::BagRecord {
        participant_id: "stream".into(),
        window_id: input.window_id.clone(),
        condition: Condition::Task,
        label: 0,
        feature_mode: mode,
        matrix: flat,
        n_rows: EXPECTED_ROWS,
        n_cols,
    };
    let bag = Bag::from_record(&record)?;

    let t0 = Instant::now();
    let prediction = model.predict(&bag)?;
    let latency_s = t0.elapsed().as_secs_f64();
    Ok(serde_json::to_string(&StreamOutput {
        window_id: &input.window_id,
        probability: prediction.probability,
        predicted: u8::from(prediction.probability >= 0.5),
        attentions: &prediction.attentions,
        latency_s,
    })?)
}

fn serve(model: &TrainedModel, input: impl BufRead, output: impl Write) -> Result<()> {
    let mut output = BufWriter::new(output);
    let mut line = String::new();
    let mut input = input;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let response = match score_line(model, trimmed) {
            Ok(response) => response,
            Err(error) => {
                let window_id = serde_json::from_str::<serde_json::Value>(trimmed)
                    .ok()
                    .and_then(|v| v.get("window_id")?.as_str().map(String::from));
                serde_json::to_string(&StreamError { error: error.to_string(), window_id })?
            }
        };
        writeln!(output, "{response}")?;
        output.flush()?;
    }
    Ok(())
}

pub fn stream(args: StreamArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)
        .map_err(|e| Error::Data(format!("cannot load model {}: {e}", args.model.display())))?;
    match &args.stream_tcp {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr)
                .map_err(|e| Error::Parameter(format!("cannot bind {addr}: {e}")))?;
            eprintln!("listening on {addr}");
            let (socket, peer) = listener.accept()?;
            eprintln!("client {peer}");
            let reader = BufReader::new(socket.try_clone()?);
            serve(&model, reader, socket)
        }
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(&model, stdin.lock(), stdout.lock())
        }
    }
}
