//! Butterworth high-pass filtering as cascaded second-order sections.
//!
//! The filter runs forward only (causal), so the same code path serves batch
//! preprocessing and streaming inference. Sections are initialized to the DC
//! steady state of the first sample, which suppresses the startup transient a
//! tonic signal (e.g. EDA) would otherwise produce: a constant input yields an
//! exactly-zero output from sample 0.

use crate::{Error, Result};

/// One direct-form-II-transposed biquad. `b2`/`a2` are zero for the
/// first-order section of odd-order designs.
#[derive(Debug, Clone, Copy)]
struct Sos {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl Sos {
    fn highpass_biquad(w0: f64, q: f64) -> Self {
        let (sin_w0, cos_w0) = w0.sin_cos();
        let alpha = sin_w0 / (2.0 * q);
        let a0 = 1.0 + alpha;
        Sos {
            b0: (1.0 + cos_w0) / 2.0 / a0,
            b1: -(1.0 + cos_w0) / a0,
            b2: (1.0 + cos_w0) / 2.0 / a0,
            a1: -2.0 * cos_w0 / a0,
            a2: (1.0 - alpha) / a0,
            s1: 0.0,
            s2: 0.0,
        }
    }

    fn highpass_first_order(w0: f64) -> Self {
        let k = (w0 / 2.0).tan();
        let a0 = 1.0 + k;
        Sos {
            b0: 1.0 / a0,
            b1: -1.0 / a0,
            b2: 0.0,
            a1: (k - 1.0) / a0,
            a2: 0.0,
            s1: 0.0,
            s2: 0.0,
        }
    }

    /// Settles internal state for a constant input `x0` (output is 0 at DC
    /// since b0+b1+b2 = 0 for a high-pass).
    fn init_dc(&mut self, x0: f64) {
        self.s2 = self.b2 * x0;
        self.s1 = (self.b1 + self.b2) * x0;
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x + self.s2 - self.a1 * y;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Streaming Butterworth high-pass. Feed samples one at a time or filter a
/// whole slice with [`highpass_filter`].
#[derive(Debug, Clone)]
pub struct HighpassFilter {
    sections: Vec<Sos>,
    primed: bool,
}

impl HighpassFilter {
    pub fn new(sample_rate_hz: f64, cutoff_hz: f64, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Parameter("filter order must be >= 1".into()));
        }
        if sample_rate_hz <= 0.0 {
            return Err(Error::Parameter(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if cutoff_hz <= 0.0 || cutoff_hz >= sample_rate_hz / 2.0 {
            return Err(Error::Parameter(format!(
                "cutoff {cutoff_hz} Hz outside (0, Nyquist={}) Hz",
                sample_rate_hz / 2.0
            )));
        }
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate_hz;
        let mut sections = Vec::with_capacity(order / 2 + 1);
        // Butterworth pole pairs: damping cos(phi_k), phi_k = (2k+1)*pi/(2N).
        for k in 0..order / 2 {
            let phi = (2 * k + 1) as f64 * std::f64::consts::PI / (2.0 * order as f64);
            let q = 1.0 / (2.0 * phi.cos());
            sections.push(Sos::highpass_biquad(w0, q));
        }
        if order % 2 == 1 {
            sections.push(Sos::highpass_first_order(w0));
        }
        Ok(HighpassFilter {
            sections,
            primed: false,
        })
    }

    pub fn order(&self) -> usize {
        self.sections
            .iter()
            .map(|s| if s.a2 == 0.0 && s.b2 == 0.0 { 1 } else { 2 })
            .sum()
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        if !self.primed {
            // First stage settles at the incoming DC level; later stages see
            // a DC of zero because each high-pass stage removes it.
            self.sections[0].init_dc(x);
            self.primed = true;
        }
        let mut v = x;
        for s in &mut self.sections {
            v = s.step(v);
        }
        v
    }

    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.s1 = 0.0;
            s.s2 = 0.0;
        }
        self.primed = false;
    }
}

/// High-pass filters `series`, returning a same-length output.
pub fn highpass_filter(
    series: &[f64],
    sample_rate_hz: f64,
    cutoff_hz: f64,
    order: usize,
) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Parameter("empty series".into()));
    }
    if series.len() < 3 * order {
        return Err(Error::Parameter(format!(
            "series length {} shorter than 3*order={}",
            series.len(),
            3 * order
        )));
    }
    let mut filter = HighpassFilter::new(sample_rate_hz, cutoff_hz, order)?;
    Ok(series.iter().map(|&x| filter.step(x)).collect())
}

/// Analytic Butterworth high-pass magnitude response, used by tests as an
/// independent oracle: |H(f)| = 1/sqrt(1 + (fc/f)^(2*order)).
pub fn butterworth_highpass_magnitude(f: f64, cutoff_hz: f64, order: usize) -> f64 {
    1.0 / (1.0 + (cutoff_hz / f).powi(2 * order as i32)).sqrt()
}
