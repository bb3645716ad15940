use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::Segment;
use crate::error::{Error, Result};

/// Largest SNR honoured; higher requests are clamped.
pub const MAX_SNR_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    HeartSound,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "heartsound" | "heart" => Ok(NoiseKind::HeartSound),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Noise source: seeded white noise, or excerpts drawn from a bank of
/// recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub bank: Vec<Vec<f64>>,
}

impl NoiseSpec {
    pub fn gaussian() -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            bank: Vec::new(),
        }
    }

    pub fn heart_sound(bank: Vec<Vec<f64>>) -> Result<Self> {
        if bank.is_empty() || bank.iter().any(Vec::is_empty) {
            return Err(Error::InvalidParameter(
                "heart-sound mixing needs a non-empty noise bank".into(),
            ));
        }
        Ok(NoiseSpec {
            kind: NoiseKind::HeartSound,
            bank,
        })
    }

    /// `len` noise samples. Bank excerpts start at a random offset and wrap
    /// around (tiling) when the recording is shorter than `len`.
    pub fn generate(&self, len: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.kind {
            NoiseKind::Gaussian => Ok((0..len).map(|_| rng.sample(StandardNormal)).collect()),
            NoiseKind::HeartSound => {
                if self.bank.is_empty() {
                    return Err(Error::InvalidParameter(
                        "heart-sound mixing needs a non-empty noise bank".into(),
                    ));
                }
                let src = &self.bank[rng.gen_range(0..self.bank.len())];
                let offset = rng.gen_range(0..src.len());
                Ok((0..len).map(|i| src[(offset + i) % src.len()]).collect())
            }
        }
    }
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Scale applied to `noise` so that `signal + alpha * noise` has the
/// requested SNR.
pub fn noise_scale(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    let pn = power(noise);
    if pn <= 0.0 || !pn.is_finite() {
        return Err(Error::InvalidParameter("noise has zero power".into()));
    }
    let snr = snr_db.min(MAX_SNR_DB);
    Ok((power(signal) / (pn * 10f64.powf(snr / 10.0))).sqrt())
}

/// SNR in dB of a signal against an additive component.
pub fn measured_snr_db(signal: &[f64], added: &[f64]) -> f64 {
    10.0 * (power(signal) / power(added)).log10()
}

/// Returns `seg + alpha * noise`; the stage is left as is.
pub fn mix_noise_at_snr(seg: &Segment, noise: &[f64], snr_db: f64) -> Result<Segment> {
    if noise.len() != seg.len() {
        return Err(Error::ShapeMismatch(format!(
            "noise has {} samples, segment {}",
            noise.len(),
            seg.len()
        )));
    }
    let alpha = noise_scale(&seg.samples, noise, snr_db)?;
    Ok(Segment {
        samples: seg
            .samples
            .iter()
            .zip(noise)
            .map(|(s, n)| s + alpha * n)
            .collect(),
        ..seg.clone()
    })
}
