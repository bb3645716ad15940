use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::Serialize;

use crate::dsp::RawRecording;
use crate::error::{Error, Result};
use crate::experiment::classify_recording;
use crate::model::{checkpoint_bytes, ModelParams};
use crate::pipeline::Featurizer;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);

/// Global allocator wrapper that counts live heap bytes. Install it with
/// `#[global_allocator]` in a binary to make the benchmark report peak
/// transient memory.
pub struct TrackingAllocator;

fn grow(n: usize) {
    let now = CURRENT.fetch_add(n, Ordering::Relaxed) + n;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size > layout.size() {
                grow(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Whether [`TrackingAllocator`] is the process allocator.
pub fn tracking_active() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Starts a measured region; returns the live byte count at its start.
fn begin_region() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

fn region_peak(baseline: usize) -> usize {
    PEAK.load(Ordering::Relaxed).saturating_sub(baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub recording_id: String,
    pub duration_sec: f64,
    pub runs: usize,
    pub segments: usize,
    pub latency_mean_sec: f64,
    pub latency_std_sec: f64,
    pub latencies_sec: Vec<f64>,
    /// Peak heap growth over each run's start, when tracking is installed.
    pub peak_transient_bytes_mean: Option<f64>,
    pub peak_transient_bytes_std: Option<f64>,
    pub peak_transient_bytes_max: Option<usize>,
    /// Byte length of the checkpoint holding the weights. Computed for a
    /// metadata-free container; callers that loaded a file may substitute
    /// its length.
    pub model_size_bytes: usize,
    pub predicted_label: String,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Times `runs` full classifications of `rec` (segmentation through vote).
pub fn benchmark_inference(
    params: &ModelParams,
    featurizer: &Featurizer,
    rec: &RawRecording,
    runs: usize,
) -> Result<BenchmarkReport> {
    if runs < 10 {
        return Err(Error::InvalidParameter(format!(
            "benchmark needs at least 10 runs, got {runs}"
        )));
    }
    let model_size_bytes = checkpoint_bytes(params, &BTreeMap::new()).len();
    // Warm-up so one-time planner setup does not land in the first sample.
    let warm = classify_recording(params, featurizer, rec)?;
    let mut latencies = Vec::with_capacity(runs);
    let mut peaks = Vec::with_capacity(runs);
    for _ in 0..runs {
        let base = begin_region();
        let t = Instant::now();
        let pred = classify_recording(params, featurizer, rec)?;
        latencies.push(t.elapsed().as_secs_f64());
        peaks.push(region_peak(base));
        std::hint::black_box(pred);
    }
    let (latency_mean_sec, latency_std_sec) = mean_std(&latencies);
    let tracked = tracking_active();
    let peak_f: Vec<f64> = peaks.iter().map(|&p| p as f64).collect();
    let (pm, ps) = mean_std(&peak_f);
    Ok(BenchmarkReport {
        recording_id: rec.recording_id.to_string(),
        duration_sec: rec.duration_sec(),
        runs,
        segments: warm.segments.len() + warm.skipped.len(),
        latency_mean_sec,
        latency_std_sec,
        latencies_sec: latencies,
        peak_transient_bytes_mean: tracked.then_some(pm),
        peak_transient_bytes_std: tracked.then_some(ps),
        peak_transient_bytes_max: tracked.then(|| peaks.iter().copied().max().unwrap_or(0)),
        model_size_bytes,
        predicted_label: warm.label.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Label;
    use crate::io::synth::synth_recording;
    use crate::model::{init_params, ModelConfig};
    use crate::pipeline::FeatureConfig;

    #[test]
    fn report_fields() {
        let params = init_params(&ModelConfig { n_blocks: 1, ..Default::default() }, 0).unwrap();
        let f = Featurizer::new(FeatureConfig::default()).unwrap();
        let rec = RawRecording::new(synth_recording(Label::Ild, 20.0, 1), 4000, "b", "s", None)
            .unwrap();
        let r = benchmark_inference(&params, &f, &rec, 10).unwrap();
        assert_eq!(r.segments, 7);
        assert_eq!(r.latencies_sec.len(), 10);
        assert!(r.latency_mean_sec > 0.0 && r.latency_std_sec > 0.0);
        assert_eq!(r.model_size_bytes, checkpoint_bytes(&params, &BTreeMap::new()).len());
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["segments"], 7);
        assert!(benchmark_inference(&params, &f, &rec, 9).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
