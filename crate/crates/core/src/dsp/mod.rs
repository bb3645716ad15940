//! Recording preprocessing: framing, high-pass filtering and per-segment
//! z-score normalization.

mod iir;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use iir::{
    apply_filter, design_butterworth, design_butterworth_hpf, Biquad, BiquadCascade, FilterKind,
};

use crate::error::{Error, Result};

/// Sampling rate shared by every stage of the pipeline.
pub const PIPELINE_SAMPLE_RATE: u32 = 4000;

/// Binary diagnosis label. ILD is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Healthy,
    Ild,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Ild => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Healthy
        } else {
            Label::Ild
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Label::Healthy => [1.0, 0.0],
            Label::Ild => [0.0, 1.0],
        }
    }

    pub const ALL: [Label; 2] = [Label::Healthy, Label::Ild];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Healthy => "Healthy",
            Label::Ild => "ILD",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Label::Healthy),
            "ild" => Ok(Label::Ild),
            other => Err(Error::Manifest(format!("unknown label token {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawRecording {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub recording_id: String,
    pub subject_id: String,
    pub label: Option<Label>,
}

impl RawRecording {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: u32,
        recording_id: impl Into<String>,
        subject_id: impl Into<String>,
        label: Option<Label>,
    ) -> Result<Self> {
        if sample_rate_hz != PIPELINE_SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate_hz));
        }
        if samples.is_empty() {
            return Err(Error::Empty("recording has no samples".into()));
        }
        Ok(RawRecording {
            samples,
            sample_rate_hz,
            recording_id: recording_id.into(),
            subject_id: subject_id.into(),
            label,
        })
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Filtered,
    Normalized,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Raw => "Raw",
            Stage::Filtered => "Filtered",
            Stage::Normalized => "Normalized",
        }
    }
}

/// A fixed-length frame cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub recording_id: Arc<str>,
    pub frame_index: usize,
    pub stage: Stage,
}

impl Segment {
    pub fn new_raw(samples: Vec<f64>, recording_id: Arc<str>, frame_index: usize) -> Self {
        Segment {
            samples,
            recording_id,
            frame_index,
            stage: Stage::Raw,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(Error::WrongStage {
                expected: expected.name(),
                found: self.stage.name(),
            })
        }
    }
}

/// Frame geometry resolved against a sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub window: usize,
    pub hop: usize,
}

impl Framing {
    pub fn new(window_sec: f64, overlap: f64, sample_rate_hz: u32) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::InvalidParameter(format!(
                "overlap must be in [0, 1), got {overlap}"
            )));
        }
        let window = window_sec * sample_rate_hz as f64;
        let hop = window * (1.0 - overlap);
        let is_int = |v: f64| v > 0.0 && (v - v.round()).abs() < 1e-9;
        if !is_int(window) || !is_int(hop) {
            return Err(Error::InvalidParameter(format!(
                "window {window} and hop {hop} samples must be positive integers"
            )));
        }
        Ok(Framing {
            window: window.round() as usize,
            hop: hop.round() as usize,
        })
    }

    /// Number of whole frames in `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.window {
            0
        } else {
            (n - self.window) / self.hop + 1
        }
    }

    pub fn starts(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.frame_count(n)).map(move |k| k * self.hop)
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Set when the recording was too short to yield any frame.
    pub warning: Option<String>,
}

/// Cuts a recording into overlapping frames. Frames that would run past the
/// end are dropped, never padded.
pub fn segment_recording(
    rec: &RawRecording,
    window_sec: f64,
    overlap: f64,
) -> Result<Segmentation> {
    let framing = Framing::new(window_sec, overlap, rec.sample_rate_hz)?;
    let id: Arc<str> = Arc::from(rec.recording_id.as_str());
    let segments: Vec<Segment> = framing
        .starts(rec.samples.len())
        .enumerate()
        .map(|(k, start)| {
            Segment::new_raw(
                rec.samples[start..start + framing.window].to_vec(),
                id.clone(),
                k,
            )
        })
        .collect();
    let warning = segments.is_empty().then(|| {
        format!(
            "recording {} has {} samples, shorter than one {}-sample window; no segments emitted",
            rec.recording_id,
            rec.samples.len(),
            framing.window
        )
    });
    Ok(Segmentation { segments, warning })
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-segment z-score with the population standard deviation.
pub fn zscore_normalize(seg: &Segment) -> Result<Segment> {
    seg.expect_stage(Stage::Filtered)?;
    if seg.is_empty() {
        return Err(Error::Empty("cannot normalize an empty segment".into()));
    }
    let (mean, std) = mean_std(&seg.samples);
    if std < 1e-12 {
        return Err(Error::DegenerateSegment(std));
    }
    Ok(Segment {
        samples: seg.samples.iter().map(|v| (v - mean) / std).collect(),
        stage: Stage::Normalized,
        ..seg.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(n: usize) -> RawRecording {
        let samples = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        RawRecording::new(samples, 4000, "rec", "subj", Some(Label::Ild)).unwrap()
    }

    fn filtered(samples: Vec<f64>) -> Segment {
        Segment {
            stage: Stage::Filtered,
            ..Segment::new_raw(samples, "r".into(), 0)
        }
    }

    #[test]
    fn fifteen_seconds_gives_five_frames() {
        let out = segment_recording(&rec(60000), 5.0, 0.5).unwrap();
        let starts: Vec<usize> = out
            .segments
            .iter()
            .map(|s| s.frame_index * 10000)
            .collect();
        assert_eq!(starts, vec![0, 10000, 20000, 30000, 40000]);
        assert!(out.warning.is_none());
        let r = rec(60000);
        assert_eq!(out.segments[3].samples[..], r.samples[30000..50000]);
    }

    #[test]
    fn exact_window_and_short_recording() {
        assert_eq!(segment_recording(&rec(20000), 5.0, 0.5).unwrap().segments.len(), 1);
        let short = segment_recording(&rec(19999), 5.0, 0.5).unwrap();
        assert!(short.segments.is_empty());
        assert!(short.warning.is_some());
    }

    #[test]
    fn framing_preconditions() {
        assert!(Framing::new(5.0, 1.0, 4000).is_err());
        assert!(Framing::new(5.0, -0.1, 4000).is_err());
        assert!(Framing::new(0.00001, 0.5, 4000).is_err());
        assert!(Framing::new(5.0, 0.33333, 4000).is_err());
    }

    #[test]
    fn non_pipeline_rate_is_rejected() {
        assert!(matches!(
            RawRecording::new(vec![0.0], 8000, "a", "b", None),
            Err(Error::SampleRate(8000))
        ));
        assert!(RawRecording::new(vec![], 4000, "a", "b", None).is_err());
    }

    #[test]
    fn zscore_definition() {
        let seg = filtered((0..1000).map(|i| (i % 7) as f64 + 1.0).collect());
        let z = zscore_normalize(&seg).unwrap();
        let (m, s) = mean_std(&z.samples);
        assert!(m.abs() < 1e-9);
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(z.stage, Stage::Normalized);
    }

    #[test]
    fn zscore_of_standardized_input_is_identity() {
        let seg = filtered((0..1000).map(|i| ((i * 37) % 101) as f64).collect());
        let z = zscore_normalize(&seg).unwrap();
        let zz = zscore_normalize(&filtered(z.samples.clone())).unwrap();
        for (a, b) in z.samples.iter().zip(&zz.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_segment_is_degenerate() {
        assert!(matches!(
            zscore_normalize(&filtered(vec![2.5; 100])),
            Err(Error::DegenerateSegment(_))
        ));
        let raw = Segment::new_raw(vec![1.0, 2.0], "r".into(), 0);
        assert!(matches!(zscore_normalize(&raw), Err(Error::WrongStage { .. })));
    }

    #[test]
    fn label_parsing_is_case_insensitive() {
        assert_eq!("ild".parse::<Label>().unwrap(), Label::Ild);
        assert_eq!("HEALTHY".parse::<Label>().unwrap(), Label::Healthy);
        assert_eq!(" Ild ".parse::<Label>().unwrap(), Label::Ild);
        assert!("copd".parse::<Label>().is_err());
    }

    proptest! {
        #[test]
        fn frame_starts_match_naive_enumeration(
            n in 1usize..5000,
            window in 1usize..400,
            hop_frac in 1usize..=4,
        ) {
            // overlap in {0, .25, .5, .75} with a window divisible by 4
            let window = window * 4;
            let overlap = 1.0 - hop_frac as f64 / 4.0;
            let framing = Framing::new(window as f64 / 4000.0, overlap, 4000).unwrap();
            let hop = framing.hop;
            let mut naive = Vec::new();
            for start in 0..n {
                if start % hop == 0 && start + window <= n {
                    naive.push(start);
                }
            }
            prop_assert_eq!(framing.starts(n).collect::<Vec<_>>(), naive);
        }

        #[test]
        fn zscore_is_idempotent(xs in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let (_, s) = mean_std(&xs);
            prop_assume!(s > 1e-3);
            let z = zscore_normalize(&filtered(xs)).unwrap();
            let zz = zscore_normalize(&filtered(z.samples.clone())).unwrap();
            for (a, b) in z.samples.iter().zip(&zz.samples) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
