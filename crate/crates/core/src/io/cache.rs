use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::RawRecording;
use crate::error::{Error, Result};
use crate::pipeline::{FeatureConfig, FeaturizedRecording, Featurizer};
use crate::tfr::MelTfrImage;

/// Per-recording index stored next to the image files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheIndex {
    recording_id: String,
    feature_hash: String,
    frames: Vec<usize>,
    skipped: Vec<usize>,
    warning: Option<String>,
}

/// On-disk store of float32 images under
/// `<root>/<feature hash>/<recording key>/<k>.f32`.
#[derive(Debug, Clone)]
pub struct TfrCache {
    root: PathBuf,
    feature_hash: String,
    image_size: usize,
}

/// Rounds every pixel through f32, the precision of cached images.
pub fn round_to_f32(img: &mut MelTfrImage) {
    img.pixels.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// Hex SHA-256 of the float32 payload of `img`.
pub fn image_content_hash(img: &MelTfrImage) -> String {
    hex::encode(Sha256::digest(img.to_f32_bytes()))
}

fn recording_key(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(64)
        .collect();
    let digest = hex::encode(Sha256::digest(id.as_bytes()));
    format!("{clean}-{}", &digest[..12])
}

impl TfrCache {
    pub fn open(root: &Path, features: &FeatureConfig) -> Result<Self> {
        let cache = TfrCache {
            root: root.to_path_buf(),
            feature_hash: features.hash(),
            image_size: features.image_size,
        };
        let dir = cache.config_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(cache)
    }

    pub fn feature_hash(&self) -> &str {
        &self.feature_hash
    }

    fn config_dir(&self) -> PathBuf {
        self.root.join(&self.feature_hash[..16])
    }

    fn recording_dir(&self, recording_id: &str) -> PathBuf {
        self.config_dir().join(recording_key(recording_id))
    }

    pub fn image_path(&self, recording_id: &str, k: usize) -> PathBuf {
        self.recording_dir(recording_id).join(format!("{k}.f32"))
    }

    fn index_path(&self, recording_id: &str) -> PathBuf {
        self.recording_dir(recording_id).join("index.json")
    }

    pub fn read_image(&self, recording_id: &str, k: usize) -> Result<MelTfrImage> {
        let path = self.image_path(recording_id, k);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n = self.image_size * self.image_size * MelTfrImage::CHANNELS;
        if bytes.len() != 4 * n {
            return Err(Error::InvalidParameter(format!(
                "{}: expected {} bytes, found {}",
                path.display(),
                4 * n,
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(MelTfrImage {
            pixels,
            height: self.image_size,
            width: self.image_size,
            recording_id: Arc::from(recording_id),
            frame_index: k,
        })
    }

    /// Cached images for a recording, or `None` when any piece is missing.
    pub fn load(&self, recording_id: &str) -> Result<Option<FeaturizedRecording>> {
        let index_path = self.index_path(recording_id);
        let text = match std::fs::read_to_string(&index_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&index_path, e)),
        };
        let index: CacheIndex = match serde_json::from_str(&text) {
            Ok(i) => i,
            Err(_) => return Ok(None),
        };
        if index.recording_id != recording_id || index.feature_hash != self.feature_hash {
            return Ok(None);
        }
        let mut images = Vec::with_capacity(index.frames.len());
        for &k in &index.frames {
            match self.read_image(recording_id, k) {
                Ok(img) => images.push(img),
                Err(Error::Io { .. }) | Err(Error::InvalidParameter(_)) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        Ok(Some(FeaturizedRecording {
            images,
            skipped: index.skipped,
            warning: index.warning,
        }))
    }

    /// Writes all images first and the index last, each atomically.
    pub fn store(&self, recording_id: &str, rec: &FeaturizedRecording) -> Result<()> {
        let dir = self.recording_dir(recording_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for img in &rec.images {
            super::write_atomic(&self.image_path(recording_id, img.frame_index), &img.to_f32_bytes())?;
        }
        let index = CacheIndex {
            recording_id: recording_id.to_string(),
            feature_hash: self.feature_hash.clone(),
            frames: rec.images.iter().map(|i| i.frame_index).collect(),
            skipped: rec.skipped.clone(),
            warning: rec.warning.clone(),
        };
        let json = serde_json::to_vec_pretty(&index).expect("index serializes");
        super::write_atomic(&self.index_path(recording_id), &json)
    }

    /// Cached images when present, otherwise featurizes `rec` and stores
    /// the result. Returned pixels are f32-rounded either way. The flag is
    /// true on a cache hit.
    pub fn featurize(
        &self,
        featurizer: &Featurizer,
        rec: &RawRecording,
    ) -> Result<(FeaturizedRecording, bool)> {
        if featurizer.config().hash() != self.feature_hash {
            return Err(Error::Config(
                "featurizer settings differ from the cache's".into(),
            ));
        }
        if let Some(hit) = self.load(&rec.recording_id)? {
            return Ok((hit, true));
        }
        let mut fresh = featurizer.featurize(rec)?;
        fresh.images.iter_mut().for_each(round_to_f32);
        self.store(&rec.recording_id, &fresh)?;
        Ok((fresh, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Label;
    use crate::io::synth::synth_recording;

    #[test]
    fn recording_keys_are_path_safe_and_distinct() {
        let a = recording_key("a/b");
        let b = recording_key("a_b");
        assert_ne!(a, b);
        assert!(!a.contains('/'));
        assert!(recording_key("../../etc").starts_with("______etc-"));
    }

    #[test]
    fn second_pass_hits_and_matches() {
        let dir = tempfile::tempdir().unwrap();
        let f = Featurizer::new(FeatureConfig::default()).unwrap();
        let cache = TfrCache::open(dir.path(), f.config()).unwrap();
        let rec = RawRecording::new(synth_recording(Label::Ild, 16.0, 3), 4000, "r1", "s1", None)
            .unwrap();
        let (first, hit1) = cache.featurize(&f, &rec).unwrap();
        let (second, hit2) = cache.featurize(&f, &rec).unwrap();
        assert!(!hit1 && hit2);
        assert_eq!(first.images, second.images);
        assert_eq!(first.images.len(), 5);

        // Different settings do not see these entries.
        let other = FeatureConfig {
            n_mels: 32,
            ..Default::default()
        };
        let other_cache = TfrCache::open(dir.path(), &other).unwrap();
        assert!(other_cache.load("r1").unwrap().is_none());
        assert!(cache.featurize(&Featurizer::new(other).unwrap(), &rec).is_err());
    }

    #[test]
    fn truncated_file_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let f = Featurizer::new(FeatureConfig::default()).unwrap();
        let cache = TfrCache::open(dir.path(), f.config()).unwrap();
        let rec = RawRecording::new(synth_recording(Label::Healthy, 10.0, 1), 4000, "r", "s", None)
            .unwrap();
        cache.featurize(&f, &rec).unwrap();
        std::fs::write(cache.image_path("r", 1), [0u8; 10]).unwrap();
        assert!(cache.load("r").unwrap().is_none());
        let (_, hit) = cache.featurize(&f, &rec).unwrap();
        assert!(!hit);
        assert!(cache.load("r").unwrap().is_some());
    }
}
