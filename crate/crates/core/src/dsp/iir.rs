//! Butterworth IIR design (analog prototype + prewarped bilinear transform)
//! factored into second-order sections, and a direct-form-II-transposed
//! cascade runner.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{Segment, Stage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `[a1, a2]`
    pub a: [f64; 2],
}

impl Biquad {
    /// Transfer function evaluated at `z`.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let zi2 = zi * zi;
        let num = self.b[0] + zi * self.b[1] + zi2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + zi * self.a[0] + zi2 * self.a[1];
        num / den
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub kind: FilterKind,
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: u32,
}

impl BiquadCascade {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz as f64;
        let z = Complex64::from_polar(1.0, w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.eval(z))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// Runs the cascade over `input` from a zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for x in out.iter_mut() {
                let xin = *x;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * y + z2;
                z2 = s.b[2] * xin - s.a[1] * y;
                *x = y;
            }
        }
        out
    }
}

/// Even-order Butterworth filter of the given kind.
pub fn design_butterworth(
    kind: FilterKind,
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: u32,
) -> Result<BiquadCascade> {
    if order < 2 || order % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "filter order must be even and >= 2, got {order}"
        )));
    }
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidParameter(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)"
        )));
    }

    // Prewarped analog cutoff with the bilinear constant 2*fs folded in.
    let k = (PI * cutoff_hz / sample_rate_hz as f64).tan();
    let k2 = k * k;
    let sections = (0..order / 2)
        .map(|i| {
            // Conjugate pole pair of the normalized prototype: s^2 + d s + 1.
            let d = 2.0 * (PI * (2 * i + 1) as f64 / (2 * order) as f64).sin();
            let a0 = 1.0 + d * k + k2;
            let a = [2.0 * (k2 - 1.0) / a0, (1.0 - d * k + k2) / a0];
            let b = match kind {
                FilterKind::Highpass => [1.0 / a0, -2.0 / a0, 1.0 / a0],
                FilterKind::Lowpass => [k2 / a0, 2.0 * k2 / a0, k2 / a0],
            };
            Biquad { b, a }
        })
        .collect();

    let cascade = BiquadCascade {
        sections,
        kind,
        order,
        cutoff_hz,
        sample_rate_hz,
    };
    let r = cascade.max_pole_radius();
    if r >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "designed filter is unstable (pole radius {r})"
        )));
    }
    Ok(cascade)
}

pub fn design_butterworth_hpf(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: u32,
) -> Result<BiquadCascade> {
    design_butterworth(FilterKind::Highpass, order, cutoff_hz, sample_rate_hz)
}

/// Filters a raw segment. Filter state starts at zero for every segment.
pub fn apply_filter(filter: &BiquadCascade, seg: &Segment) -> Result<Segment> {
    seg.expect_stage(Stage::Raw)?;
    Ok(Segment {
        samples: filter.filter(&seg.samples),
        stage: Stage::Filtered,
        ..seg.clone()
    })
}
