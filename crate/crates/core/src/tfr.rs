//! Time-frequency imaging: Hann-windowed STFT, triangular mel filterbank,
//! magnitude mel spectrogram, and the dB / min-max / jet / bilinear-resize
//! chain that turns it into a 64x64x3 image.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dsp::{Segment, Stage};
use crate::error::{Error, Result};

/// Floor added before the dB conversion.
pub const DB_EPSILON: f64 = 1e-10;
pub const JET_LUT_SIZE: usize = 256;

/// Symmetric Hann window.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "hann window needs at least 2 points, got {n}"
        )));
    }
    let d = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / d).cos()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// Row-major `n_frames x n_bins`.
    pub values: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub window_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn frame(&self, g: usize) -> &[Complex64] {
        &self.values[g * self.n_bins..(g + 1) * self.n_bins]
    }

    pub fn bin_frequency(&self, f: usize, sample_rate_hz: f64) -> f64 {
        f as f64 * sample_rate_hz / self.window_len as f64
    }
}

/// Reusable STFT plan: window and FFT are built once.
pub struct Stft {
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::InvalidParameter("STFT hop must be positive".into()));
        }
        let window = hann_window(window_len)?;
        let fft = FftPlanner::new().plan_fft_forward(window_len);
        Ok(Stft { window, hop, fft })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.window.len() {
            0
        } else {
            1 + (n - self.window.len()) / self.hop
        }
    }

    /// No center padding; only the non-redundant `n/2 + 1` bins are kept.
    pub fn transform(&self, seg: &Segment) -> Result<Spectrogram> {
        seg.expect_stage(Stage::Normalized)?;
        self.transform_samples(&seg.samples)
    }

    pub fn transform_samples(&self, x: &[f64]) -> Result<Spectrogram> {
        let n = self.window.len();
        if x.len() < n {
            return Err(Error::InvalidParameter(format!(
                "segment of {} samples is shorter than the {n}-sample STFT window",
                x.len()
            )));
        }
        let n_frames = self.frame_count(x.len());
        let n_bins = n / 2 + 1;
        let mut values = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for g in 0..n_frames {
            let frame = &x[g * self.hop..g * self.hop + n];
            for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex64::new(s * w, 0.0);
            }
            self.fft.process(&mut buf);
            values.extend_from_slice(&buf[..n_bins]);
        }
        Ok(Spectrogram {
            values,
            n_frames,
            n_bins,
            window_len: n,
            hop: self.hop,
        })
    }
}

pub fn stft(seg: &Segment, window_len: usize, hop: usize) -> Result<Spectrogram> {
    Stft::new(window_len, hop)?.transform(seg)
}

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency must be non-negative, got {f}"
        )));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Row-major `n_mels x n_bins`.
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

/// Triangular filters whose `n_mels + 2` edges are uniform on the mel axis.
/// Each row is sampled at FFT-bin frequencies and rescaled so its largest
/// sampled weight is exactly 1.
pub fn build_mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate_hz: f64,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::InvalidParameter("n_mels must be >= 1".into()));
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(f_max <= nyquist && f_min < f_max) {
        return Err(Error::InvalidParameter(format!(
            "mel range [{f_min}, {f_max}] Hz must be increasing and within Nyquist {nyquist} Hz"
        )));
    }
    let (lo, hi) = (hz_to_mel(f_min)?, hz_to_mel(f_max)?);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = |k: usize| k as f64 * sample_rate_hz / n_fft as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k);
            let v = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            *w = v;
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mel filter {m} ({left:.2}-{right:.2} Hz) covers no FFT bin; \
                 too many mel bands for this FFT size"
            )));
        }
        row.iter_mut().for_each(|w| *w /= peak);
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        n_bins,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// Row-major `n_frames x n_mels`.
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_mels: usize,
}

/// `M[g, m] = sum_f fb[m, f] * |S[g, f]|`
pub fn mel_spectrogram(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    if spec.n_bins != fb.n_bins {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.n_bins, fb.n_bins
        )));
    }
    let mut values = Vec::with_capacity(spec.n_frames * fb.n_mels);
    let mut mag = vec![0.0; spec.n_bins];
    for g in 0..spec.n_frames {
        for (m, c) in mag.iter_mut().zip(spec.frame(g)) {
            *m = c.norm();
        }
        for m in 0..fb.n_mels {
            values.push(fb.row(m).iter().zip(&mag).map(|(w, a)| w * a).sum());
        }
    }
    Ok(MelSpectrogram {
        values,
        n_frames: spec.n_frames,
        n_mels: fb.n_mels,
    })
}

/// Classic piecewise-linear jet: each channel is `clamp(1.5 - |4x - c|, 0, 1)`
/// with `c = 3, 2, 1` for R, G, B. Breakpoints sit at x = 1/8, 3/8, 5/8, 7/8.
pub fn jet(x: f64) -> [f64; 3] {
    let ramp = |c: f64| (1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

pub fn jet_lut() -> &'static [[f64; 3]; JET_LUT_SIZE] {
    static LUT: OnceLock<[[f64; 3]; JET_LUT_SIZE]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [[0.0; 3]; JET_LUT_SIZE];
        for (i, e) in lut.iter_mut().enumerate() {
            *e = jet(i as f64 / (JET_LUT_SIZE - 1) as f64);
        }
        lut
    })
}

/// LUT color for a normalized value in `[0, 1]`.
pub fn jet_lookup(v: f64) -> [f64; 3] {
    let idx = (v.clamp(0.0, 1.0) * (JET_LUT_SIZE - 1) as f64).round() as usize;
    jet_lut()[idx]
}

/// LUT as CSV text, six decimals per value.
pub fn jet_lut_csv() -> String {
    jet_lut()
        .iter()
        .map(|[r, g, b]| format!("{r:.6},{g:.6},{b:.6}\n"))
        .collect()
}

/// Color image stored row-major as `height x width x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelTfrImage {
    pub pixels: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub recording_id: Arc<str>,
    pub frame_index: usize,
}

impl MelTfrImage {
    pub const CHANNELS: usize = 3;

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Raw little-endian float32, row-major `H x W x C`.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }
}

// Exact when a == b.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Half-pixel-center bilinear sample positions for resizing `n_in -> n_out`.
fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// dB, per-image min-max, jet colormap, then bilinear resize to
/// `image_size x image_size`. Time runs along the width and the lowest mel
/// band lands on the bottom row.
pub fn tfr_to_image(
    mel: &MelSpectrogram,
    image_size: usize,
    recording_id: Arc<str>,
    frame_index: usize,
) -> Result<MelTfrImage> {
    if mel.values.is_empty() || mel.n_frames == 0 || mel.n_mels == 0 {
        return Err(Error::Empty("mel spectrogram is empty".into()));
    }
    let db: Vec<f64> = mel
        .values
        .iter()
        .map(|&m| 20.0 * (m + DB_EPSILON).log10())
        .collect();
    let (lo, hi) = db
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };

    // Colored grid, rows = mel bands flipped (high at top), cols = frames.
    let (rows, cols) = (mel.n_mels, mel.n_frames);
    let mut grid = vec![0.0; rows * cols * 3];
    for g in 0..cols {
        for m in 0..mel.n_mels {
            let c = jet_lookup(norm(db[g * mel.n_mels + m]));
            let r = rows - 1 - m;
            grid[(r * cols + g) * 3..(r * cols + g) * 3 + 3].copy_from_slice(&c);
        }
    }

    let row_taps = resize_taps(rows, image_size);
    let col_taps = resize_taps(cols, image_size);
    let mut pixels = vec![0.0; image_size * image_size * 3];
    for (y, &(r0, r1, fy)) in row_taps.iter().enumerate() {
        for (x, &(c0, c1, fx)) in col_taps.iter().enumerate() {
            for ch in 0..3 {
                let at = |r: usize, c: usize| grid[(r * cols + c) * 3 + ch];
                let top = lerp(at(r0, c0), at(r0, c1), fx);
                let bottom = lerp(at(r1, c0), at(r1, c1), fx);
                pixels[(y * image_size + x) * 3 + ch] = lerp(top, bottom, fy);
            }
        }
    }
    Ok(MelTfrImage {
        pixels,
        height: image_size,
        width: image_size,
        recording_id,
        frame_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Segment;

    fn normalized(samples: Vec<f64>) -> Segment {
        Segment {
            stage: Stage::Normalized,
            ..Segment::new_raw(samples, "r".into(), 0)
        }
    }

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / 4000.0).sin())
            .collect()
    }

    fn default_fb() -> MelFilterbank {
        build_mel_filterbank(64, 1024, 4000.0, 0.0, 2000.0).unwrap()
    }

    // Direct O(n^2) DFT of one windowed frame.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|f| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        Complex64::from_polar(v, -2.0 * PI * (i * f) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn hann_values() {
        let w = hann_window(4).unwrap();
        let want = [0.0, 0.75, 0.75, 0.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = hann_window(9).unwrap();
        assert_eq!(w[0], 0.0);
        assert!(w[8].abs() < 1e-15);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!(hann_window(1).is_err());
    }

    #[test]
    fn five_second_segment_has_38_frames() {
        let s = stft(&normalized(vec![0.0; 20000]), 1024, 512).unwrap();
        assert_eq!(s.n_frames, 38);
        assert_eq!(s.n_bins, 513);
        assert!(s.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_matches_naive_dft() {
        let x: Vec<f64> = (0..2048).map(|i| ((i * 31 % 97) as f64 - 48.0) / 50.0).collect();
        let s = stft(&normalized(x.clone()), 256, 128).unwrap();
        let w = hann_window(256).unwrap();
        for g in [0, 3, s.n_frames - 1] {
            let frame: Vec<f64> = (0..256).map(|i| x[g * 128 + i] * w[i]).collect();
            for (a, b) in s.frame(g).iter().zip(naive_dft(&frame)) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let s = stft(&normalized(tone(1000.0, 20000)), 1024, 512).unwrap();
        for g in 0..s.n_frames {
            let frame = s.frame(g);
            let argmax = (0..s.n_bins)
                .max_by(|&a, &b| frame[a].norm().partial_cmp(&frame[b].norm()).unwrap())
                .unwrap();
            assert_eq!(argmax, 256);
            let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
            let near: f64 = frame[254..=258].iter().map(|c| c.norm_sqr()).sum();
            assert!(near / total >= 0.9);
        }
    }

    #[test]
    fn stft_is_linear() {
        let x = tone(333.0, 4096);
        let a = stft(&normalized(x.clone()), 1024, 512).unwrap();
        let b = stft(&normalized(x.iter().map(|v| 2.5 * v).collect()), 1024, 512).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((p * 2.5 - q).norm() <= 1e-9 * q.norm().max(1e-12) + 1e-12);
        }
    }

    #[test]
    fn stft_errors() {
        assert!(stft(&normalized(vec![0.0; 1000]), 1024, 512).is_err());
        let raw = Segment::new_raw(vec![0.0; 2000], "r".into(), 0);
        assert!(stft(&raw, 1024, 512).is_err());
    }

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert!((hz_to_mel(700.0).unwrap() - 781.1728387480312).abs() < 1e-9);
        let f = 1234.5;
        assert!((mel_to_hz(hz_to_mel(f).unwrap()) - f).abs() / f < 1e-9);
        assert!(hz_to_mel(-1.0).is_err());
    }

    #[test]
    fn filterbank_shape_and_rows() {
        let fb = default_fb();
        assert_eq!((fb.n_mels, fb.n_bins), (64, 513));
        for m in 0..64 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            let peak_at: Vec<usize> = (0..513).filter(|&k| row[k] == 1.0).collect();
            assert_eq!(peak_at.len(), 1, "row {m}");
            let p = peak_at[0];
            assert!(row[..=p].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[p..].windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn filterbank_covers_interior_bins() {
        let fb = default_fb();
        for k in 1..512 {
            let s: f64 = (0..64).map(|m| fb.row(m)[k]).sum();
            assert!(s > 0.0, "bin {k} uncovered");
        }
    }

    #[test]
    fn too_many_mels_is_an_error() {
        assert!(build_mel_filterbank(1000, 1024, 4000.0, 0.0, 2000.0).is_err());
        assert!(build_mel_filterbank(64, 1024, 4000.0, 0.0, 2500.0).is_err());
    }

    #[test]
    fn mel_of_unit_bin_is_filterbank_column() {
        let fb = default_fb();
        let mut values = vec![Complex64::new(0.0, 0.0); 513];
        values[100] = Complex64::new(0.0, 1.0);
        let spec = Spectrogram {
            values,
            n_frames: 1,
            n_bins: 513,
            window_len: 1024,
            hop: 512,
        };
        let mel = mel_spectrogram(&spec, &fb).unwrap();
        for m in 0..64 {
            assert_eq!(mel.values[m], fb.row(m)[100]);
        }
    }

    #[test]
    fn tone_lands_in_nearest_mel_band() {
        let fb = default_fb();
        let nearest = (0..64)
            .min_by(|&a, &b| {
                (fb.centers_hz[a] - 1000.0)
                    .abs()
                    .partial_cmp(&(fb.centers_hz[b] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(nearest, 42);
        let s = stft(&normalized(tone(1000.0, 20000)), 1024, 512).unwrap();
        let mel = mel_spectrogram(&s, &fb).unwrap();
        for g in 0..mel.n_frames {
            let row = &mel.values[g * 64..(g + 1) * 64];
            let argmax = (0..64)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn jet_endpoints_and_golden_csv() {
        assert_eq!(jet_lut()[0], [0.0, 0.0, 0.5]);
        assert_eq!(jet_lut()[255], [0.5, 0.0, 0.0]);
        let golden = include_str!("../data/jet_lut.csv");
        let mut n = 0;
        for (line, entry) in golden.lines().zip(jet_lut()) {
            for (tok, v) in line.split(',').zip(entry) {
                assert!((tok.parse::<f64>().unwrap() - v).abs() <= 1e-6);
            }
            n += 1;
        }
        assert_eq!(n, 256);
        assert_eq!(jet_lut_csv(), golden);
    }

    fn mel_from(values: Vec<f64>, n_frames: usize) -> MelSpectrogram {
        MelSpectrogram {
            values,
            n_frames,
            n_mels: 64,
        }
    }

    #[test]
    fn constant_mel_gives_uniform_mid_jet() {
        let img = tfr_to_image(&mel_from(vec![3.0; 38 * 64], 38), 64, "r".into(), 0).unwrap();
        let c = jet_lookup(0.5);
        for px in img.pixels.chunks(3) {
            assert_eq!(px, c);
        }
    }

    #[test]
    fn image_is_scale_invariant_and_bounded() {
        let vals: Vec<f64> = (0..38 * 64)
            .map(|i| 1.0 + ((i * 7919) % 1013) as f64)
            .collect();
        let a = tfr_to_image(&mel_from(vals.clone(), 38), 64, "r".into(), 0).unwrap();
        let b = tfr_to_image(
            &mel_from(vals.iter().map(|v| v * 37.0).collect(), 38),
            64,
            "r".into(),
            0,
        )
        .unwrap();
        assert_eq!(a.pixels.len(), 64 * 64 * 3);
        assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        for (p, q) in a.pixels.iter().zip(&b.pixels) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn low_band_is_bottom_row() {
        // Energy only in mel band 0.
        let mut vals = vec![0.0; 38 * 64];
        for g in 0..38 {
            vals[g * 64] = 1.0;
        }
        let img = tfr_to_image(&mel_from(vals, 38), 64, "r".into(), 0).unwrap();
        assert_eq!(img.pixel(63, 10), jet_lookup(1.0));
        assert_eq!(img.pixel(0, 10), jet_lookup(0.0));
    }
}
