//! Recording to image featurization: segment, high-pass, z-score, STFT,
//! mel projection and colormapped image.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::dsp::{
    apply_filter, design_butterworth_hpf, segment_recording, zscore_normalize, BiquadCascade,
    RawRecording, Segment, PIPELINE_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::tfr::{build_mel_filterbank, mel_spectrogram, tfr_to_image, MelFilterbank, MelTfrImage, Stft};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window_sec: f64,
    pub overlap: f64,
    pub filter_order: usize,
    pub filter_cutoff_hz: f64,
    pub stft_window: usize,
    pub stft_hop: usize,
    pub n_mels: usize,
    pub mel_fmin_hz: f64,
    pub mel_fmax_hz: f64,
    pub image_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_sec: 5.0,
            overlap: 0.5,
            filter_order: 4,
            filter_cutoff_hz: 10.0,
            stft_window: 1024,
            stft_hop: 512,
            n_mels: 64,
            mel_fmin_hz: 0.0,
            mel_fmax_hz: 2000.0,
            image_size: 64,
        }
    }
}

impl FeatureConfig {
    /// Hex SHA-256 over every field; identifies cached images.
    pub fn hash(&self) -> String {
        let text = format!(
            "window_sec={:?};overlap={:?};filter_order={};filter_cutoff_hz={:?};stft_window={};stft_hop={};n_mels={};mel_fmin_hz={:?};mel_fmax_hz={:?};image_size={}",
            self.window_sec,
            self.overlap,
            self.filter_order,
            self.filter_cutoff_hz,
            self.stft_window,
            self.stft_hop,
            self.n_mels,
            self.mel_fmin_hz,
            self.mel_fmax_hz,
            self.image_size
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Images for one recording plus the frame indices that had to be skipped
/// because the filtered segment was numerically constant.
#[derive(Debug, Clone)]
pub struct FeaturizedRecording {
    pub images: Vec<MelTfrImage>,
    pub skipped: Vec<usize>,
    pub warning: Option<String>,
}

/// Precomputed filter, STFT plan and filterbank.
pub struct Featurizer {
    config: FeatureConfig,
    filter: BiquadCascade,
    stft: Stft,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Featurizer")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Featurizer {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let filter = design_butterworth_hpf(
            config.filter_order,
            config.filter_cutoff_hz,
            PIPELINE_SAMPLE_RATE,
        )?;
        let stft = Stft::new(config.stft_window, config.stft_hop)?;
        let filterbank = build_mel_filterbank(
            config.n_mels,
            config.stft_window,
            PIPELINE_SAMPLE_RATE as f64,
            config.mel_fmin_hz,
            config.mel_fmax_hz,
        )?;
        if config.image_size == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        Ok(Featurizer {
            config,
            filter,
            stft,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn segment(&self, rec: &RawRecording) -> Result<crate::dsp::Segmentation> {
        segment_recording(rec, self.config.window_sec, self.config.overlap)
    }

    /// Full chain for one raw segment.
    pub fn image(&self, raw: &Segment) -> Result<MelTfrImage> {
        let filtered = apply_filter(&self.filter, raw)?;
        let normalized = zscore_normalize(&filtered)?;
        let spec = self.stft.transform(&normalized)?;
        let mel = mel_spectrogram(&spec, &self.filterbank)?;
        tfr_to_image(
            &mel,
            self.config.image_size,
            Arc::clone(&raw.recording_id),
            raw.frame_index,
        )
    }

    pub fn featurize(&self, rec: &RawRecording) -> Result<FeaturizedRecording> {
        let seg = self.segment(rec)?;
        let mut images = Vec::with_capacity(seg.segments.len());
        let mut skipped = Vec::new();
        for s in &seg.segments {
            match self.image(s) {
                Ok(img) => images.push(img),
                Err(Error::DegenerateSegment(_)) => skipped.push(s.frame_index),
                Err(e) => return Err(e),
            }
        }
        Ok(FeaturizedRecording {
            images,
            skipped,
            warning: seg.warning,
        })
    }
}
