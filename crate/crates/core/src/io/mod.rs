//! File formats and desk-scale tooling: WAV, synthetic data, run
//! configuration, the image cache, embedding export and the inference
//! benchmark.

mod bench;
mod cache;
mod config;
mod embeddings;
pub(crate) mod synth;
mod wav;

use std::io::Write;
use std::path::Path;

pub use bench::{benchmark_inference, tracking_active, BenchmarkReport, TrackingAllocator};
pub use cache::{image_content_hash, round_to_f32, TfrCache};
pub use config::{RunConfig, CONFIG_KEYS};
pub use embeddings::{embeddings_csv, export_embeddings};
pub use synth::{
    generate_heart_sound_bank, generate_synthetic_dataset, high_band_energy_ratio,
    synth_heart_sound, synth_recording, SynthConfig,
};
pub use wav::{decode_wav, encode_wav_pcm16, quantize, read_wav, write_wav};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}
