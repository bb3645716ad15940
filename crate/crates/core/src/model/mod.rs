//! The vision-transformer classifier: configuration, parameter accounting,
//! initialization, forward pass and checkpoint container.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use forward::{
    encode_patches, forward_on_tape, mha_forward, model_forward, patchify, transformer_block,
    unpatchify, BlockVars, ForwardVars, ModelOutput, PatchSet,
};
#[cfg(test)]
pub(crate) use forward::forward_patches;
pub use params::{init_params, ModelParams, ParamKind, ParamTensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub proj_len: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub mlp_dims: Vec<usize>,
    pub dropout: f64,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            channels: 3,
            patch_size: 8,
            proj_len: 64,
            n_blocks: 4,
            n_heads: 4,
            head_dim: 64,
            mlp_dims: vec![128, 64],
            dropout: 0.3,
            n_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.mlp_dims.last() != Some(&self.proj_len) {
            return bad(format!(
                "last MLP width {:?} must equal the projection length {}",
                self.mlp_dims.last(),
                self.proj_len
            ));
        }
        if [self.channels, self.proj_len, self.n_heads, self.head_dim, self.n_classes]
            .contains(&0)
            || self.mlp_dims.contains(&0)
        {
            return bad("model dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Width of the concatenated attention heads.
    pub fn attn_width(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn patch_encoder_params(&self) -> usize {
        self.patch_dim() * self.proj_len + self.proj_len + self.n_patches() * self.proj_len
    }

    pub fn layer_norm_params(&self) -> usize {
        2 * self.proj_len
    }

    pub fn mha_params(&self) -> usize {
        let (d, w) = (self.proj_len, self.attn_width());
        3 * (d * w + w) + (w * d + d)
    }

    pub fn mlp_params(&self) -> usize {
        let mut fan_in = self.proj_len;
        let mut n = 0;
        for &width in &self.mlp_dims {
            n += fan_in * width + width;
            fan_in = width;
        }
        n
    }

    pub fn block_params(&self) -> usize {
        2 * self.layer_norm_params() + self.mha_params() + self.mlp_params()
    }

    pub fn head_params(&self) -> usize {
        self.proj_len * self.n_classes + self.n_classes
    }
}

/// Trainable-parameter counts per architectural stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLedger {
    pub stages: Vec<(String, usize)>,
    pub total: usize,
}

impl ParameterLedger {
    pub fn get(&self, stage: &str) -> Option<usize> {
        self.stages
            .iter()
            .find(|(name, _)| name == stage)
            .map(|(_, n)| *n)
    }
}

/// Counts follow from shape arithmetic alone.
pub fn count_parameters(config: &ModelConfig) -> Result<ParameterLedger> {
    config.validate()?;
    let mut stages = vec![
        ("mel_spectrogram".to_string(), 0),
        ("patchification".to_string(), 0),
        ("patch_encoder".to_string(), config.patch_encoder_params()),
    ];
    for b in 1..=config.n_blocks {
        stages.push((format!("transformer_block_{b}"), config.block_params()));
    }
    stages.push(("final_layer_norm".into(), config.layer_norm_params()));
    stages.push(("global_average_pooling".into(), 0));
    stages.push(("head_dense".into(), config.head_params()));
    let total = stages.iter().map(|(_, n)| n).sum();
    Ok(ParameterLedger { stages, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ledger_matches_reference_architecture() {
        let ledger = count_parameters(&ModelConfig::default()).unwrap();
        assert_eq!(ledger.get("patch_encoder"), Some(16448));
        for b in 1..=4 {
            assert_eq!(ledger.get(&format!("transformer_block_{b}")), Some(83200));
        }
        assert_eq!(ledger.get("final_layer_norm"), Some(128));
        assert_eq!(ledger.get("head_dense"), Some(130));
        assert_eq!(ledger.total, 349506);
    }

    #[test]
    fn block_breakdown() {
        let c = ModelConfig::default();
        assert_eq!(c.mha_params(), 66368);
        assert_eq!(c.mlp_params() + 2 * c.layer_norm_params(), 16832);
        assert_eq!(c.layer_norm_params(), 128);
        assert_eq!((c.n_patches(), c.patch_dim()), (64, 192));
    }

    #[test]
    fn three_block_variant() {
        let c = ModelConfig {
            n_blocks: 3,
            ..Default::default()
        };
        assert_eq!(count_parameters(&c).unwrap().total, 266306);
    }

    #[test]
    fn invalid_configs() {
        let c = ModelConfig {
            patch_size: 7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            mlp_dims: vec![128, 32],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
