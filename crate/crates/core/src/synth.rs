//! Synthetic dataset generator with planted, modality-asynchronous
//! CWS-indicative patterns and instance-level ground truth.
//!
//! Recordings are built in two stages. A participant's *carrier* holds smooth
//! per-sample control curves (instantaneous HR, tonic EDA, respiration rate
//! and amplitude); patterns are planted by deforming those curves, and the
//! waveforms are synthesized afterwards. Planting on the carrier rather than
//! the rendered signal keeps R-peak timing consistent with the HR deformation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{baseline_score, featurize_window, BagRecord, FeatureMode, Modality};
use crate::models::Bag;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::signal::{
    extract_windows_default, save_manifest, save_recording, Condition, DatasetManifest, Group,
    RawRecording, SEGMENTS_PER_WINDOW, WINDOW_HOP_S, WINDOW_S,
};
use crate::{Error, Result};

/// Seconds of baseline recording per participant (four 20 s windows).
const BASELINE_S: f64 = 65.0;
/// Earliest pattern onset inside a window, relative to the window start. The
/// margin keeps a pattern from leaking into the previous overlapping window.
const PATTERN_MARGIN_S: f64 = 5.0;
/// Latest pattern end, relative to the window start; patterns stay inside the
/// window's non-shared span.
const PATTERN_SPAN_S: f64 = 15.0;
/// Decay time constant for carrier deformations after a pattern ends.
const RELEASE_TAU_S: f64 = 1.0;
/// EDA returns to tonic more slowly than the other channels; the slow release
/// keeps segment means rising through the whole ramp without elevating the
/// rest of the window.
const EDA_RELEASE_TAU_S: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    EdaRamp,
    HrFreeze,
    HrVarBurst,
    RspRateDrift,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::EdaRamp,
        PatternKind::HrFreeze,
        PatternKind::HrVarBurst,
        PatternKind::RspRateDrift,
    ];

    /// The modality whose instance labels this pattern sets.
    pub fn modality(self) -> Modality {
        match self {
            PatternKind::EdaRamp => Modality::Eda,
            PatternKind::HrFreeze | PatternKind::HrVarBurst => Modality::Hr,
            PatternKind::RspRateDrift => Modality::RspRate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::EdaRamp => "eda_ramp",
            PatternKind::HrFreeze => "hr_freeze",
            PatternKind::HrVarBurst => "hr_var_burst",
            PatternKind::RspRateDrift => "rsp_rate_drift",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cws: usize,
    pub n_cwns: usize,
    pub windows_per_participant: usize,
    pub patterns: Vec<PatternKind>,
    /// Pattern duration range in seconds; must stay within [2, 5].
    pub pattern_duration_s: (f64, f64),
    /// Chance a CWS window receives a pattern per eligible modality.
    pub pattern_probability: f64,
    /// Place per-modality patterns at independent times within a window.
    pub asynchrony: bool,
    /// Plant half-amplitude decoy patterns in 20% of CWNS windows.
    pub decoys: bool,
    pub noise_sd_ecg: f64,
    pub noise_sd_eda: f64,
    pub noise_sd_rsp: f64,
    /// Per-participant resting heart rate range (bpm).
    pub hr_rest_bpm: (f64, f64),
    /// Per-participant tonic EDA level range.
    pub eda_tonic: (f64, f64),
    /// Per-participant breathing rate range (breaths/min).
    pub rsp_rate_bpm: (f64, f64),
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cws: 20,
            n_cwns: 20,
            windows_per_participant: 20,
            patterns: PatternKind::ALL.to_vec(),
            pattern_duration_s: (2.0, 3.5),
            pattern_probability: 0.75,
            asynchrony: true,
            decoys: true,
            noise_sd_ecg: 0.02,
            noise_sd_eda: 0.3,
            noise_sd_rsp: 0.05,
            hr_rest_bpm: (90.0, 120.0),
            eda_tonic: (3.3, 4.1),
            rsp_rate_bpm: (15.0, 25.0),
            sample_rate_hz: crate::signal::DEFAULT_SAMPLE_RATE_HZ,
            seed: 0,
        }
    }
}

/// Probability of a decoy pattern in a CWNS window when decoys are enabled.
const DECOY_PROBABILITY: f64 = 0.2;
/// Decoy amplitude relative to the planted CWS amplitude.
const DECOY_SCALE: f64 = 0.5;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cws < 7 || self.n_cwns < 7 {
            return Err(Error::Parameter(format!(
                "need at least 7 participants per class for split compatibility, got {} CWS / {} CWNS",
                self.n_cws, self.n_cwns
            )));
        }
        if self.windows_per_participant == 0 {
            return Err(Error::Parameter("windows_per_participant must be positive".into()));
        }
        if self.patterns.is_empty() {
            return Err(Error::Parameter("pattern set is empty".into()));
        }
        let (lo, hi) = self.pattern_duration_s;
        if !(2.0..=5.0).contains(&lo) || !(2.0..=5.0).contains(&hi) || lo > hi {
            return Err(Error::Parameter(format!(
                "pattern durations must satisfy 2 <= lo <= hi <= 5, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.pattern_probability) {
            return Err(Error::Parameter(format!(
                "pattern_probability must lie in [0, 1], got {}",
                self.pattern_probability
            )));
        }
        for (name, sd) in [
            ("noise_sd_ecg", self.noise_sd_ecg),
            ("noise_sd_eda", self.noise_sd_eda),
            ("noise_sd_rsp", self.noise_sd_rsp),
        ] {
            if sd < 0.0 || !sd.is_finite() {
                return Err(Error::Parameter(format!("{name} must be non-negative, got {sd}")));
            }
        }
        for (name, (lo, hi)) in [
            ("hr_rest_bpm", self.hr_rest_bpm),
            ("eda_tonic", self.eda_tonic),
            ("rsp_rate_bpm", self.rsp_rate_bpm),
        ] {
            if lo > hi || lo <= 0.0 {
                return Err(Error::Parameter(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::Parameter("sample_rate_hz must be positive".into()));
        }
        Ok(())
    }

    fn task_duration_s(&self) -> f64 {
        WINDOW_S + WINDOW_HOP_S * (self.windows_per_participant - 1) as f64
    }
}

/// One planted (or decoy) pattern instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternDescriptor {
    pub kind: PatternKind,
    /// Onset relative to the recording start, seconds.
    pub start_s: f64,
    pub duration_s: f64,
    /// 1.0 for planted patterns, 0.5 for decoys.
    pub amplitude_scale: f64,
    /// Decoys keep all-zero instance labels.
    pub decoy: bool,
}

/// Instance-level truth for one window: a 19-long 0/1 vector per modality
/// plus the descriptors of every pattern overlapping the window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowTruth {
    pub window_id: String,
    pub participant_id: String,
    /// Keyed by canonical modality name.
    pub labels: BTreeMap<String, Vec<u8>>,
    pub patterns: Vec<PatternDescriptor>,
}

impl WindowTruth {
    /// Bag label implied by the instance labels: max over all modalities.
    pub fn bag_label(&self) -> u8 {
        self.labels
            .values()
            .flat_map(|v| v.iter())
            .copied()
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub windows: BTreeMap<String, WindowTruth>,
}

impl SynthGroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SynthGroundTruth> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Per-sample control curves a recording is synthesized from.
#[derive(Debug, Clone, PartialEq)]
pub struct Carrier {
    pub sample_rate_hz: f64,
    /// Instantaneous heart rate, bpm.
    pub hr_bpm: Vec<f64>,
    /// Tonic EDA level.
    pub eda_tonic: Vec<f64>,
    /// Instantaneous breathing rate, breaths/min.
    pub rsp_rate_bpm: Vec<f64>,
    /// Respiration oscillation amplitude.
    pub rsp_amp: Vec<f64>,
}

impl Carrier {
    pub fn len(&self) -> usize {
        self.hr_bpm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr_bpm.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// Stable per-participant physiology shared by the baseline and task
/// recordings: resting levels plus the phases of the slow modulations.
#[derive(Debug, Clone)]
struct Traits {
    hr_rest: f64,
    hrv: [(f64, f64, f64); 2], // (amplitude bpm, frequency Hz, phase)
    hr_wander: (f64, f64, f64),
    eda_level: f64,
    eda_drift: (f64, f64, f64),
    rsp_rate: f64,
    rsp_wander: (f64, f64, f64),
    rsp_amp: f64,
}

fn draw_traits(config: &SynthConfig, rng: &mut Rng) -> Traits {
    Traits {
        hr_rest: rng.gen_range(config.hr_rest_bpm.0..=config.hr_rest_bpm.1),
        hrv: [
            (3.5, rng.gen_range(0.08..0.12), rng.gen_range(0.0..2.0 * PI)),
            (2.5, rng.gen_range(0.20..0.30), rng.gen_range(0.0..2.0 * PI)),
        ],
        hr_wander: (6.0, rng.gen_range(0.01..0.03), rng.gen_range(0.0..2.0 * PI)),
        eda_level: rng.gen_range(config.eda_tonic.0..=config.eda_tonic.1),
        eda_drift: (0.45, rng.gen_range(0.015..0.04), rng.gen_range(0.0..2.0 * PI)),
        rsp_rate: rng.gen_range(config.rsp_rate_bpm.0..=config.rsp_rate_bpm.1),
        rsp_wander: (1.5, rng.gen_range(0.01..0.025), rng.gen_range(0.0..2.0 * PI)),
        rsp_amp: rng.gen_range(0.9..1.1),
    }
}

/// Standard deviation of the natural heart-rate variability the traits plant.
fn hrv_sd(traits: &Traits) -> f64 {
    (traits.hrv.iter().map(|(a, _, _)| a * a / 2.0).sum::<f64>()).sqrt()
}

fn build_carrier(traits: &Traits, duration_s: f64, sample_rate_hz: f64) -> Carrier {
    let n = (duration_s * sample_rate_hz).round() as usize;
    let dt = 1.0 / sample_rate_hz;
    let mut hr = Vec::with_capacity(n);
    let mut eda = Vec::with_capacity(n);
    let mut rsp_rate = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let mut h = traits.hr_rest;
        for (a, f, phi) in traits.hrv {
            h += a * (2.0 * PI * f * t + phi).sin();
        }
        let (wa, wf, wphi) = traits.hr_wander;
        h += wa * (2.0 * PI * wf * t + wphi).sin();
        hr.push(h);
        let (da, df, dphi) = traits.eda_drift;
        eda.push(traits.eda_level + da * (2.0 * PI * df * t + dphi).sin());
        let (ra, rf, rphi) = traits.rsp_wander;
        rsp_rate.push(traits.rsp_rate + ra * (2.0 * PI * rf * t + rphi).sin());
    }
    Carrier {
        sample_rate_hz,
        hr_bpm: hr,
        eda_tonic: eda,
        rsp_rate_bpm: rsp_rate,
        rsp_amp: vec![traits.rsp_amp; n],
    }
}

/// C1 ramp from 0 at u<=0 to 1 at u>=1.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Deforms the carrier's control curves over [start_s, start_s+duration_s].
///
/// `amplitude` is the pattern's physical size: tonic rise for eda_ramp, HR
/// dip in bpm for hr_freeze, added HR standard deviation for hr_var_burst,
/// and breaths/min for rsp_rate_drift. Zero amplitude leaves the carrier
/// untouched. Deformations release exponentially after the pattern ends.
pub fn plant_pattern(
    carrier: &mut Carrier,
    kind: PatternKind,
    start_s: f64,
    duration_s: f64,
    amplitude: f64,
    rng: &mut Rng,
) -> Result<()> {
    if duration_s <= 0.0 {
        return Err(Error::Parameter(format!("pattern duration {duration_s} must be positive")));
    }
    if start_s < 0.0 || start_s + duration_s > carrier.duration_s() + 1e-9 {
        return Err(Error::Parameter(format!(
            "pattern [{start_s}, {:.2}] falls outside the {:.2} s recording",
            start_s + duration_s,
            carrier.duration_s()
        )));
    }
    let fs = carrier.sample_rate_hz;
    let end_s = start_s + duration_s;
    let tau = match kind {
        PatternKind::EdaRamp => EDA_RELEASE_TAU_S,
        _ => RELEASE_TAU_S,
    };
    // Deformations act until the release tail becomes negligible.
    let tail_s = (end_s + 6.0 * tau).min(carrier.duration_s());
    let i0 = (start_s * fs) as usize;
    let i1 = ((tail_s * fs) as usize).min(carrier.len());

    // Burst oscillators: two tones in the 0.5-1 Hz band with random phases,
    // each of amplitude `amplitude` so their combined sd equals `amplitude`.
    let burst = [
        (rng.gen_range(0.5..0.75), rng.gen_range(0.0..2.0 * PI)),
        (rng.gen_range(0.75..1.0), rng.gen_range(0.0..2.0 * PI)),
    ];

    for i in i0..i1 {
        let t = i as f64 / fs;
        // Monotone rise across the pattern, exponential release afterwards.
        let ramp = if t <= end_s {
            smoothstep((t - start_s) / duration_s)
        } else {
            (-(t - end_s) / tau).exp()
        };
        // Plateau: quick rise and fall inside the pattern bounds.
        let attack = 0.2 * duration_s;
        let plateau = if t <= end_s {
            smoothstep((t - start_s) / attack) * smoothstep((end_s - t) / attack)
        } else {
            0.0
        };
        match kind {
            PatternKind::EdaRamp => carrier.eda_tonic[i] += amplitude * ramp,
            PatternKind::RspRateDrift => carrier.rsp_rate_bpm[i] += amplitude * ramp,
            PatternKind::HrFreeze => {
                carrier.hr_bpm[i] -= amplitude * plateau;
                if t > end_s {
                    // Rebound above baseline as the freeze releases.
                    let u = (t - end_s) / (1.5 * RELEASE_TAU_S);
                    carrier.hr_bpm[i] += 0.35 * amplitude * (PI * u.min(1.0)).sin();
                }
            }
            PatternKind::HrVarBurst => {
                let mut wobble = 0.0;
                for (f, phi) in burst {
                    wobble += (2.0 * PI * f * t + phi).sin();
                }
                carrier.hr_bpm[i] += amplitude * wobble * plateau;
            }
        }
    }
    Ok(())
}

/// Marks the 2 s segments of a window starting at `window_start_s` that a
/// pattern at [start_s, start_s+duration_s] overlaps.
pub fn instance_labels(
    window_start_s: f64,
    start_s: f64,
    duration_s: f64,
) -> [u8; SEGMENTS_PER_WINDOW] {
    let mut labels = [0u8; SEGMENTS_PER_WINDOW];
    for (i, label) in labels.iter_mut().enumerate() {
        let seg_start = window_start_s + i as f64;
        let seg_end = seg_start + 2.0;
        if start_s < seg_end && start_s + duration_s > seg_start {
            *label = 1;
        }
    }
    labels
}

fn gauss(rng: &mut Rng) -> f64 {
    // Box-Muller; the log argument is kept away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Renders a carrier into waveforms: a Gaussian-bump R-wave train paced by
/// the integrated HR curve, tonic EDA, and an amplitude-modulated respiration
/// sinusoid, each with additive Gaussian noise.
fn synthesize(
    participant_id: &str,
    group: Group,
    condition: Condition,
    carrier: &Carrier,
    config: &SynthConfig,
    rng: &mut Rng,
) -> RawRecording {
    let n = carrier.len();
    let fs = carrier.sample_rate_hz;

    let mut ecg = vec![0.0; n];
    let bump_sd = 0.012 * fs; // ~12 ms QRS spread
    let half = (4.0 * bump_sd).ceil() as i64;
    let mut phase = 0.25; // first beat lands shortly after the start
    for i in 0..n {
        phase += carrier.hr_bpm[i] / (60.0 * fs);
        if phase >= 1.0 {
            phase -= 1.0;
            let center = i as i64;
            let lo = (center - half).max(0);
            let hi = (center + half).min(n as i64 - 1);
            for j in lo..=hi {
                let d = (j - center) as f64;
                ecg[j as usize] += (-d * d / (2.0 * bump_sd * bump_sd)).exp();
            }
        }
    }
    for v in &mut ecg {
        *v += config.noise_sd_ecg * gauss(rng);
    }

    let eda: Vec<f64> = carrier
        .eda_tonic
        .iter()
        .map(|t| t + config.noise_sd_eda * gauss(rng))
        .collect();

    let mut rsp = Vec::with_capacity(n);
    let mut rphase = 0.0;
    for i in 0..n {
        rphase += 2.0 * PI * carrier.rsp_rate_bpm[i] / (60.0 * fs);
        rsp.push(carrier.rsp_amp[i] * rphase.sin() + config.noise_sd_rsp * gauss(rng));
    }

    RawRecording {
        participant_id: participant_id.to_string(),
        group,
        condition,
        ecg,
        eda,
        rsp,
        sample_rate_hz: fs,
    }
}

/// One participant's output: both recordings plus per-window truth.
#[derive(Debug, Clone)]
pub struct ParticipantData {
    pub baseline: RawRecording,
    pub task: RawRecording,
    pub truth: Vec<WindowTruth>,
}

fn draw_amplitude(kind: PatternKind, config: &SynthConfig, traits: &Traits, rng: &mut Rng) -> f64 {
    match kind {
        // Tonic rise roughly three times the sample noise.
        PatternKind::EdaRamp => 3.0 * config.noise_sd_eda,
        PatternKind::HrFreeze => rng.gen_range(10.0..=20.0),
        // Added sd at twice the natural HRV sd: local variance rises 5x,
        // enough to move 2 s segment statistics reliably.
        PatternKind::HrVarBurst => 2.0 * hrv_sd(traits),
        PatternKind::RspRateDrift => rng.gen_range(5.0..=9.0),
    }
}

/// Generates one participant deterministically from `seed`.
pub fn generate_participant(
    participant_id: &str,
    group: Group,
    config: &SynthConfig,
    seed: u64,
) -> Result<ParticipantData> {
    config.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, "traits"));
    let traits = draw_traits(config, &mut rng);

    let baseline_carrier = build_carrier(&traits, BASELINE_S, config.sample_rate_hz);
    let mut noise_rng = rng_from_seed(derive_seed(seed, "baseline-noise"));
    let baseline = synthesize(
        participant_id,
        group,
        Condition::Baseline,
        &baseline_carrier,
        config,
        &mut noise_rng,
    );

    let mut task_carrier = build_carrier(&traits, config.task_duration_s(), config.sample_rate_hz);
    let mut plan_rng = rng_from_seed(derive_seed(seed, "patterns"));
    // One candidate kind per modality; when several configured kinds share a
    // modality, each window picks one so per-modality labels stay sparse.
    let mut kinds_by_modality: BTreeMap<usize, Vec<PatternKind>> = BTreeMap::new();
    for &kind in &config.patterns {
        kinds_by_modality.entry(kind.modality().index()).or_default().push(kind);
    }

    let mut truth = Vec::with_capacity(config.windows_per_participant);
    for w in 0..config.windows_per_participant {
        let window_start = WINDOW_HOP_S * w as f64;
        let window_id = format!("{participant_id}-w{w:03}");
        let mut labels: BTreeMap<String, Vec<u8>> = Modality::ALL
            .iter()
            .map(|m| (m.name().to_string(), vec![0u8; SEGMENTS_PER_WINDOW]))
            .collect();
        let mut patterns = Vec::new();

        let (lo, hi) = config.pattern_duration_s;
        // Onsets snap to whole seconds: a fractional onset can graze a 7th
        // segment with a 5 s pattern and break the sparsity bound.
        let draw_slot = |rng: &mut Rng| {
            let duration = rng.gen_range(lo..=hi);
            let last = (PATTERN_SPAN_S - duration).floor() as u64;
            let start = window_start + rng.gen_range(PATTERN_MARGIN_S as u64..=last) as f64;
            (start, duration)
        };
        // With asynchrony off, every modality shares one onset and duration.
        let shared = draw_slot(&mut plan_rng);

        if group == Group::Cws {
            for kinds in kinds_by_modality.values() {
                if !plan_rng.gen_bool(config.pattern_probability) {
                    continue;
                }
                let kind = kinds[plan_rng.gen_range(0..kinds.len())];
                let (start, duration) =
                    if config.asynchrony { draw_slot(&mut plan_rng) } else { shared };
                let amplitude = draw_amplitude(kind, config, &traits, &mut plan_rng);
                plant_pattern(&mut task_carrier, kind, start, duration, amplitude, &mut plan_rng)?;
                let marks = instance_labels(window_start, start, duration);
                let slot = labels.get_mut(kind.modality().name()).expect("canonical modality");
                for (l, m) in slot.iter_mut().zip(marks) {
                    *l |= m;
                }
                patterns.push(PatternDescriptor {
                    kind,
                    start_s: start,
                    duration_s: duration,
                    amplitude_scale: 1.0,
                    decoy: false,
                });
            }
        } else if config.decoys && plan_rng.gen_bool(DECOY_PROBABILITY) {
            let kind = config.patterns[plan_rng.gen_range(0..config.patterns.len())];
            let (start, duration) = draw_slot(&mut plan_rng);
            let amplitude =
                DECOY_SCALE * draw_amplitude(kind, config, &traits, &mut plan_rng);
            plant_pattern(&mut task_carrier, kind, start, duration, amplitude, &mut plan_rng)?;
            // Decoys are recorded but never labeled.
            patterns.push(PatternDescriptor {
                kind,
                start_s: start,
                duration_s: duration,
                amplitude_scale: DECOY_SCALE,
                decoy: true,
            });
        }

        truth.push(WindowTruth {
            window_id,
            participant_id: participant_id.to_string(),
            labels,
            patterns,
        });
    }

    let mut task_noise = rng_from_seed(derive_seed(seed, "task-noise"));
    let task = synthesize(
        participant_id,
        group,
        Condition::Task,
        &task_carrier,
        config,
        &mut task_noise,
    );
    Ok(ParticipantData { baseline, task, truth })
}

/// A generated dataset ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub participants: Vec<(String, Group)>,
    pub bags: Vec<Bag>,
    pub truth: SynthGroundTruth,
    /// Present when the recordings were written to disk.
    pub manifest: Option<DatasetManifest>,
}

/// Generates every participant (in parallel, deterministically), featurizes
/// the task windows in `mode`, and collects the instance-level ground truth.
/// When `out_dir` is given the recordings, bags, and truth are also written
/// there (`recordings/`, `bags.jsonl`, `ground_truth.json`, `manifest.json`).
pub fn generate_dataset(
    config: &SynthConfig,
    mode: FeatureMode,
    out_dir: Option<&Path>,
) -> Result<SynthDataset> {
    config.validate()?;
    let recordings_dir = match out_dir {
        Some(base) => {
            let dir = base.join("recordings");
            std::fs::create_dir_all(&dir)?;
            Some(dir)
        }
        None => None,
    };

    let mut roster: Vec<(String, Group)> = Vec::new();
    for i in 0..config.n_cws {
        roster.push((format!("s{i:03}"), Group::Cws));
    }
    for i in 0..config.n_cwns {
        roster.push((format!("n{i:03}"), Group::Cwns));
    }

    let results: Vec<(Vec<Bag>, Vec<WindowTruth>, Vec<crate::signal::ManifestEntry>)> = roster
        .par_iter()
        .map(|(pid, group)| {
            let seed = derive_seed(config.seed, &format!("participant/{pid}"));
            let data = generate_participant(pid, *group, config, seed)?;

            let mut entries = Vec::new();
            if let Some(dir) = &recordings_dir {
                entries.push(save_recording(&data.baseline, &dir.join(format!("{pid}-baseline")))?);
                entries.push(save_recording(&data.task, &dir.join(format!("{pid}-task")))?);
            }

            let baseline = match mode {
                FeatureMode::Raw => None,
                FeatureMode::Change | FeatureMode::Delta => {
                    Some(baseline_score(&extract_windows_default(&data.baseline)?)?)
                }
            };
            let windows = extract_windows_default(&data.task)?;
            if windows.len() != data.truth.len() {
                return Err(Error::Data(format!(
                    "{pid}: {} windows extracted but {} planned",
                    windows.len(),
                    data.truth.len()
                )));
            }
            let mut bags = Vec::with_capacity(windows.len());
            for (window, truth) in windows.iter().zip(&data.truth) {
                let grid = featurize_window(window, mode, baseline.as_ref())?;
                let record = BagRecord::new(
                    pid.clone(),
                    truth.window_id.clone(),
                    Condition::Task,
                    group.label(),
                    mode,
                    &grid,
                );
                bags.push(Bag::from_record(&record)?);
            }
            Ok((bags, data.truth, entries))
        })
        .collect::<Result<_>>()?;

    let mut dataset = SynthDataset {
        participants: roster,
        bags: Vec::new(),
        truth: SynthGroundTruth::default(),
        manifest: None,
    };
    let mut manifest = Vec::new();
    for (bags, truths, entries) in results {
        dataset.bags.extend(bags);
        for t in truths {
            dataset.truth.windows.insert(t.window_id.clone(), t);
        }
        manifest.extend(entries);
    }

    if let Some(base) = out_dir {
        save_manifest(&manifest, &base.join("manifest.json"))?;
        let records: Vec<BagRecord> = dataset
            .bags
            .iter()
            .map(|b| {
                BagRecord::new(
                    b.participant_id.clone(),
                    b.window_id.clone(),
                    b.condition,
                    b.label,
                    b.feature_mode,
                    &b.concat(),
                )
            })
            .collect();
        crate::features::save_bag_records(&base.join("bags.jsonl"), &records)?;
        dataset.truth.save(&base.join("ground_truth.json"))?;
        dataset.manifest = Some(manifest);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::raw_features;
    use crate::signal::Window;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_cws: 7,
            n_cwns: 7,
            windows_per_participant: 3,
            sample_rate_hz: 250.0,
            // Guarantee a pattern in every CWS window so label-consistency
            // assertions are exact.
            pattern_probability: 1.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        assert!(SynthConfig::default().validate().is_ok());
        let mut c = SynthConfig::default();
        c.n_cws = 6;
        assert!(c.validate().is_err());
        c = SynthConfig::default();
        c.pattern_duration_s = (1.0, 4.0);
        assert!(c.validate().is_err());
        c = SynthConfig::default();
        c.pattern_duration_s = (5.0, 2.0);
        assert!(c.validate().is_err());
        c = SynthConfig::default();
        c.pattern_probability = 1.5;
        assert!(c.validate().is_err());
        c = SynthConfig::default();
        c.patterns.clear();
        assert!(c.validate().is_err());
        c = SynthConfig::default();
        c.noise_sd_eda = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn participants_are_deterministic() {
        let config = small_config();
        let a = generate_participant("s000", Group::Cws, &config, 11).unwrap();
        let b = generate_participant("s000", Group::Cws, &config, 11).unwrap();
        assert_eq!(a.task.ecg, b.task.ecg);
        assert_eq!(a.task.eda, b.task.eda);
        assert_eq!(a.task.rsp, b.task.rsp);
        assert_eq!(a.baseline.ecg, b.baseline.ecg);
        assert_eq!(
            serde_json::to_string(&a.truth).unwrap(),
            serde_json::to_string(&b.truth).unwrap()
        );
        let c = generate_participant("s000", Group::Cws, &config, 12).unwrap();
        assert_ne!(a.task.ecg, c.task.ecg);
    }

    #[test]
    fn cws_windows_carry_patterns_and_cwns_labels_stay_zero() {
        let config = small_config();
        let cws = generate_participant("s000", Group::Cws, &config, 1).unwrap();
        for t in &cws.truth {
            assert!(t.patterns.iter().any(|p| !p.decoy), "{} has no pattern", t.window_id);
            assert_eq!(t.bag_label(), 1, "{} labels empty", t.window_id);
        }
        let cwns = generate_participant("n000", Group::Cwns, &config, 2).unwrap();
        for t in &cwns.truth {
            assert_eq!(t.bag_label(), 0, "{} has positive labels", t.window_id);
            assert!(t.patterns.iter().all(|p| p.decoy));
        }
    }

    #[test]
    fn sparsity_stays_within_six_segments_per_modality() {
        let config = small_config();
        for seed in 0..4 {
            let data = generate_participant("s000", Group::Cws, &config, seed).unwrap();
            for t in &data.truth {
                for (modality, labels) in &t.labels {
                    let positives: u8 = labels.iter().sum();
                    assert!(
                        positives <= 6,
                        "{} {modality}: {positives}/19 positives",
                        t.window_id
                    );
                }
            }
        }
    }

    #[test]
    fn plant_pattern_validates_bounds_and_zero_amplitude() {
        let traits = draw_traits(&small_config(), &mut rng_from_seed(0));
        let mut carrier = build_carrier(&traits, 20.0, 250.0);
        let pristine = carrier.clone();
        let mut rng = rng_from_seed(1);
        // Out of bounds.
        assert!(plant_pattern(&mut carrier, PatternKind::EdaRamp, 18.0, 4.0, 1.0, &mut rng)
            .is_err());
        assert!(plant_pattern(&mut carrier, PatternKind::EdaRamp, -1.0, 3.0, 1.0, &mut rng)
            .is_err());
        assert!(plant_pattern(&mut carrier, PatternKind::EdaRamp, 5.0, 0.0, 1.0, &mut rng)
            .is_err());
        assert_eq!(carrier, pristine);
        // Zero amplitude leaves every curve untouched.
        for kind in PatternKind::ALL {
            plant_pattern(&mut carrier, kind, 6.0, 3.0, 0.0, &mut rng).unwrap();
        }
        assert_eq!(carrier, pristine);
    }

    /// Renders a 20 s carrier into a single window for feature checks.
    fn window_from_carrier(carrier: &Carrier, config: &SynthConfig, seed: u64) -> Window {
        let mut rng = rng_from_seed(seed);
        let rec = synthesize("p0", Group::Cws, Condition::Task, carrier, config, &mut rng);
        Window {
            participant_id: rec.participant_id,
            condition: rec.condition,
            start_s: 0.0,
            ecg: rec.ecg,
            eda: rec.eda,
            rsp: rec.rsp,
            sample_rate_hz: rec.sample_rate_hz,
        }
    }

    #[test]
    fn hr_freeze_dips_the_extracted_hr_mean() {
        let config = small_config();
        let traits = draw_traits(&config, &mut rng_from_seed(3));
        let mut carrier = build_carrier(&traits, 20.0, 250.0);
        plant_pattern(&mut carrier, PatternKind::HrFreeze, 6.0, 3.0, 15.0, &mut rng_from_seed(4))
            .unwrap();
        let grid = raw_features(&window_from_carrier(&carrier, &config, 5)).unwrap();
        // HR mean is column 0. Pre-pattern mean over segments 0..4 (ending
        // before 6 s); the freeze spans segments 5-8.
        let pre: f64 = (0..4).map(|r| grid.get(r, 0)).sum::<f64>() / 4.0;
        let dip = (5..9).map(|r| grid.get(r, 0)).fold(f64::INFINITY, f64::min);
        assert!(pre - dip >= 5.0, "pre {pre:.1} bpm, dip {dip:.1} bpm");
    }

    #[test]
    fn eda_ramp_rises_across_its_segments() {
        let config = small_config();
        let traits = draw_traits(&config, &mut rng_from_seed(6));
        let mut carrier = build_carrier(&traits, 20.0, 250.0);
        // Flatten the drift so the check isolates the ramp.
        let level = carrier.eda_tonic[0];
        carrier.eda_tonic.iter_mut().for_each(|v| *v = level);
        plant_pattern(&mut carrier, PatternKind::EdaRamp, 6.0, 4.0, 0.9, &mut rng_from_seed(7))
            .unwrap();
        let grid = raw_features(&window_from_carrier(&carrier, &config, 8)).unwrap();
        // EDA mean is column 6. The ramp spans 6-10 s: segments 5..9 start
        // inside it and their means must strictly increase.
        for r in 5..9 {
            assert!(
                grid.get(r + 1, 6) > grid.get(r, 6),
                "segment {} mean {:.3} !< segment {} mean {:.3}",
                r,
                grid.get(r, 6),
                r + 1,
                grid.get(r + 1, 6)
            );
        }
    }

    #[test]
    fn hr_var_burst_doubles_local_variance() {
        let config = small_config();
        let traits = draw_traits(&config, &mut rng_from_seed(9));
        let clean = build_carrier(&traits, 20.0, 250.0);
        let mut burst = clean.clone();
        plant_pattern(
            &mut burst,
            PatternKind::HrVarBurst,
            5.0,
            5.0,
            hrv_sd(&traits),
            &mut rng_from_seed(10),
        )
        .unwrap();
        // Compare the carrier-level HR variance over the pattern core; the
        // added oscillators should roughly double it.
        fn core(c: &Carrier) -> &[f64] {
            &c.hr_bpm[(6.0 * 250.0) as usize..(9.0 * 250.0) as usize]
        }
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        let ratio = var(core(&burst)) / var(core(&clean));
        assert!(ratio > 1.5 && ratio < 4.0, "variance ratio {ratio:.2}");
    }

    #[test]
    fn asynchrony_decorrelates_pattern_onsets() {
        // Enough CWS windows for a stable correlation estimate.
        let config = SynthConfig {
            n_cws: 7,
            n_cwns: 7,
            windows_per_participant: 30,
            sample_rate_hz: 250.0,
            pattern_probability: 1.0,
            ..SynthConfig::default()
        };
        let mut eda_starts = Vec::new();
        let mut hr_starts = Vec::new();
        for p in 0..7 {
            let seed = derive_seed(config.seed, &format!("participant/s{p:03}"));
            let data = generate_participant(&format!("s{p:03}"), Group::Cws, &config, seed).unwrap();
            for (w, t) in data.truth.iter().enumerate() {
                let window_start = WINDOW_HOP_S * w as f64;
                let onset = |m: Modality| {
                    t.patterns
                        .iter()
                        .find(|p| p.kind.modality() == m)
                        .map(|p| p.start_s - window_start)
                };
                if let (Some(e), Some(h)) = (onset(Modality::Eda), onset(Modality::Hr)) {
                    eda_starts.push(e);
                    hr_starts.push(h);
                }
            }
        }
        assert!(eda_starts.len() >= 200, "only {} paired onsets", eda_starts.len());
        let n = eda_starts.len() as f64;
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
        let (me, mh) = (mean(&eda_starts), mean(&hr_starts));
        let mut cov = 0.0;
        let mut ve = 0.0;
        let mut vh = 0.0;
        for (e, h) in eda_starts.iter().zip(&hr_starts) {
            cov += (e - me) * (h - mh);
            ve += (e - me) * (e - me);
            vh += (h - mh) * (h - mh);
        }
        let r = cov / (ve.sqrt() * vh.sqrt());
        assert!(r.abs() < 0.2, "onset correlation r={r:.3}");
    }

    #[test]
    fn dataset_shape_and_balance() {
        let config = small_config();
        let dataset = generate_dataset(&config, FeatureMode::Raw, None).unwrap();
        assert_eq!(dataset.bags.len(), 14 * 3);
        assert_eq!(dataset.truth.windows.len(), 14 * 3);
        let positives = dataset.bags.iter().filter(|b| b.label == 1).count();
        assert_eq!(positives, 7 * 3);
        // Every bag has matching ground truth whose implied label agrees for
        // CWS and CWNS alike (pattern probability is 1.0).
        for bag in &dataset.bags {
            let truth = dataset.truth.windows.get(&bag.window_id).expect("truth entry");
            assert_eq!(truth.bag_label(), bag.label, "{}", bag.window_id);
            assert_eq!(truth.participant_id, bag.participant_id);
        }
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let config = small_config();
        let a = generate_dataset(&config, FeatureMode::Change, None).unwrap();
        let b = generate_dataset(&config, FeatureMode::Change, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a.truth).unwrap(),
            serde_json::to_string(&b.truth).unwrap()
        );
        assert_eq!(a.bags.len(), b.bags.len());
        for (x, y) in a.bags.iter().zip(&b.bags) {
            assert_eq!(x.window_id, y.window_id);
            assert_eq!(x.concat(), y.concat());
        }
    }

    #[test]
    fn dataset_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_cws: 7,
            n_cwns: 7,
            windows_per_participant: 1,
            sample_rate_hz: 250.0,
            ..SynthConfig::default()
        };
        let dataset = generate_dataset(&config, FeatureMode::Raw, Some(dir.path())).unwrap();
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("bags.jsonl").exists());
        assert!(dir.path().join("ground_truth.json").exists());
        // 14 participants, two recordings each.
        assert_eq!(dataset.manifest.as_ref().unwrap().len(), 28);
        let truth = SynthGroundTruth::load(&dir.path().join("ground_truth.json")).unwrap();
        assert_eq!(truth.windows.len(), dataset.truth.windows.len());
        let records =
            crate::features::load_bag_records(&dir.path().join("bags.jsonl")).unwrap();
        assert_eq!(records.len(), dataset.bags.len());
    }

    /// Mann-Whitney AUC of a score against binary labels.
    fn auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut pairs = 0.0;
        let mut wins = 0.0;
        for (&s, &y) in scores.iter().zip(labels) {
            if y != 1 {
                continue;
            }
            for (&s2, &y2) in scores.iter().zip(labels) {
                if y2 != 0 {
                    continue;
                }
                pairs += 1.0;
                if s > s2 {
                    wins += 1.0;
                } else if s == s2 {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn separability_oracle_lands_in_the_target_band() {
        // Larger pool so the AUC estimate is stable.
        let config = SynthConfig {
            n_cws: 10,
            n_cwns: 10,
            windows_per_participant: 10,
            sample_rate_hz: 250.0,
            // Oracle calibration is about amplitudes; plant in every window.
            pattern_probability: 1.0,
            ..SynthConfig::default()
        };
        let dataset = generate_dataset(&config, FeatureMode::Raw, None).unwrap();
        // The planted EDA ramp's most-affected raw column is the EDA mean
        // (column 6); a window's peak segment value is the single-feature
        // score.
        let scores: Vec<f64> = dataset
            .bags
            .iter()
            .map(|b| {
                let grid = b.concat();
                (0..grid.n_rows).map(|r| grid.get(r, 6)).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let labels: Vec<u8> = dataset.bags.iter().map(|b| b.label).collect();
        let auc = auc(&scores, &labels);
        assert!(
            (0.85..=0.95).contains(&auc),
            "EDA separability AUC {auc:.3} outside [0.85, 0.95]"
        );
    }
}
