use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Label, RawRecording, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(e: hound::Error) -> Error {
    Error::WavFormat(e.to_string())
}

/// Decodes PCM16 mono 4 kHz WAV bytes into samples in `[-1, 1)`.
pub fn decode_wav(bytes: &[u8]) -> Result<Vec<f64>> {
    let reader = WavReader::new(Cursor::new(bytes)).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavFormat(format!(
            "expected 16-bit PCM, got {:?} with {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::WavFormat(format!(
            "expected mono, got {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != PIPELINE_SAMPLE_RATE {
        return Err(Error::SampleRate(spec.sample_rate));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(wav_err))
        .collect()
}

pub fn read_wav(
    path: &Path,
    recording_id: &str,
    subject_id: &str,
    label: Option<Label>,
) -> Result<RawRecording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let samples = decode_wav(&bytes).map_err(|e| match e {
        Error::WavFormat(m) => Error::WavFormat(format!("{}: {m}", path.display())),
        other => other,
    })?;
    RawRecording::new(samples, PIPELINE_SAMPLE_RATE, recording_id, subject_id, label)
}

/// Quantizes to PCM16 (`round(x * 32768)`, saturating).
pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav_pcm16(samples: &[i16], sample_rate_hz: u32) -> Vec<u8> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * samples.len()));
    {
        let mut w = WavWriter::new(&mut buf, spec).expect("in-memory writer");
        let mut i16w = w.get_i16_writer(samples.len() as u32);
        for &s in samples {
            i16w.write_sample(s);
        }
        i16w.flush().expect("in-memory writer");
        w.finalize().expect("in-memory writer");
    }
    buf.into_inner()
}

pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let pcm: Vec<i16> = samples.iter().map(|&x| quantize(x)).collect();
    super::write_atomic(path, &encode_wav_pcm16(&pcm, PIPELINE_SAMPLE_RATE))
}
