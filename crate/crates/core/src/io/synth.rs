//! Synthetic respiratory-like recordings with a known class structure.
//!
//! Both classes share band-limited noise shaped by a breathing envelope.
//! The ILD class adds short decaying tone bursts above 500 Hz during
//! inspiration, standing in for crackles.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::autodiff::DropoutRng;
use crate::dsp::{design_butterworth, FilterKind, Label, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry, Source};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects_per_class: usize,
    pub recordings_per_subject: usize,
    pub min_duration_sec: f64,
    pub max_duration_sec: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects_per_class: 20,
            recordings_per_subject: 1,
            min_duration_sec: 15.0,
            max_duration_sec: 50.0,
            seed: 0,
        }
    }
}

/// One recording of `duration_sec` seconds, deterministic in `seed`.
pub fn synth_recording(label: Label, duration_sec: f64, seed: u64) -> Vec<f64> {
    let fs = PIPELINE_SAMPLE_RATE as f64;
    let n = (duration_sec * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let lp = design_butterworth(FilterKind::Lowpass, 4, 400.0, PIPELINE_SAMPLE_RATE)
        .expect("valid design");
    let hp = design_butterworth(FilterKind::Highpass, 2, 60.0, PIPELINE_SAMPLE_RATE)
        .expect("valid design");
    let breath = hp.filter(&lp.filter(&white));

    let period = rng.gen_range(3.0..5.0);
    let phase = rng.gen_range(0.0..1.0);
    let envelope = |t: f64| {
        let s = (2.0 * PI * (t / period + phase)).sin();
        0.15 + 0.85 * s.max(0.0).powi(2)
    };
    let mut out: Vec<f64> = breath
        .iter()
        .enumerate()
        .map(|(i, &b)| 0.25 * b * envelope(i as f64 / fs))
        .collect();

    if label == Label::Ild {
        let gap = rng.gen_range(0.04..0.08);
        let mut t = rng.gen_range(0.0..gap);
        let duration = n as f64 / fs;
        while t < duration {
            let inspiring = (2.0 * PI * (t / period + phase)).sin() > 0.0;
            if inspiring {
                let freq = rng.gen_range(700.0..1400.0);
                let amp = rng.gen_range(0.25..0.45);
                let tau = rng.gen_range(0.002..0.005);
                let start = (t * fs) as usize;
                let len = (6.0 * tau * fs) as usize;
                for j in 0..len.min(n.saturating_sub(start)) {
                    let dt = j as f64 / fs;
                    out[start + j] += amp * (-dt / tau).exp() * (2.0 * PI * freq * dt).sin();
                }
            }
            t += gap * rng.gen_range(0.6..1.4);
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.9 {
        out.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    out
}

/// Heart-sound-like noise: paired low-frequency thumps (S1, S2) at a
/// random rate between 60 and 90 beats per minute.
pub fn synth_heart_sound(duration_sec: f64, seed: u64) -> Vec<f64> {
    let fs = PIPELINE_SAMPLE_RATE as f64;
    let n = (duration_sec * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beat = 60.0 / rng.gen_range(60.0..90.0);
    let mut out = vec![0.0; n];
    let mut t = rng.gen_range(0.0..beat);
    let thump = |out: &mut [f64], at: f64, freq: f64, amp: f64| {
        let c = (at * fs) as isize;
        for j in -200isize..200 {
            let i = c + j;
            if i >= 0 && (i as usize) < out.len() {
                let dt = j as f64 / fs;
                out[i as usize] += amp * (-(dt / 0.015).powi(2)).exp() * (2.0 * PI * freq * dt).cos();
            }
        }
    };
    while t < duration_sec {
        thump(&mut out, t, rng.gen_range(40.0..60.0), 0.5);
        thump(&mut out, t + 0.3 * beat, rng.gen_range(50.0..70.0), 0.35);
        t += beat;
    }
    out
}

/// Share of spectral energy above `cutoff_hz`.
pub fn high_band_energy_ratio(x: &[f64], cutoff_hz: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let fs = PIPELINE_SAMPLE_RATE as f64;
    let (mut hi, mut total) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let e = c.norm_sqr();
        total += e;
        if k as f64 * fs / n as f64 > cutoff_hz {
            hi += e;
        }
    }
    if total > 0.0 {
        hi / total
    } else {
        0.0
    }
}

/// Writes `<out_dir>/wav/*.wav` plus `<out_dir>/manifest.csv`.
pub fn generate_synthetic_dataset(out_dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.subjects_per_class == 0 || cfg.recordings_per_subject == 0 {
        return Err(Error::InvalidParameter(
            "subject and recording counts must be at least 1".into(),
        ));
    }
    if !(cfg.min_duration_sec > 0.0 && cfg.min_duration_sec <= cfg.max_duration_sec) {
        return Err(Error::InvalidParameter(format!(
            "duration range [{}, {}] is invalid",
            cfg.min_duration_sec, cfg.max_duration_sec
        )));
    }
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::new();
    for label in Label::ALL {
        let tag = match label {
            Label::Healthy => "healthy",
            Label::Ild => "ild",
        };
        for s in 0..cfg.subjects_per_class {
            for r in 0..cfg.recordings_per_subject {
                let seed = DropoutRng::derive(cfg.seed, &[label.index() as u64, s as u64, r as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let duration = if cfg.max_duration_sec > cfg.min_duration_sec {
                    rng.gen_range(cfg.min_duration_sec..=cfg.max_duration_sec)
                } else {
                    cfg.min_duration_sec
                };
                let samples = synth_recording(label, duration, rng.gen());
                let recording_id = format!("{tag}_s{s:03}_r{r:02}");
                let path = wav_dir.join(format!("{recording_id}.wav"));
                super::write_wav(&path, &samples)?;
                entries.push(ManifestEntry {
                    path,
                    recording_id,
                    subject_id: format!("{tag}_s{s:03}"),
                    label,
                    source: Source::Synth,
                });
            }
        }
    }
    let manifest = Manifest::new(entries)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Writes `n` heart-sound recordings of `duration_sec` into `dir`.
pub fn generate_heart_sound_bank(dir: &Path, n: usize, duration_sec: f64, seed: u64) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..n)
        .map(|i| {
            let path = dir.join(format!("heart_{i:03}.wav"));
            super::write_wav(&path, &synth_heart_sound(duration_sec, DropoutRng::derive(seed, &[i as u64])))?;
            Ok(path)
        })
        .collect()
}
