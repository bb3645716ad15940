use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Kernel { fan_in: usize, fan_out: usize },
    Bias,
    Position,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// All trainable tensors in canonical order (see [`ModelParams::layout`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<ParamTensor>,
}

/// Per-block tensor count before the MLP kernels: LN1 (2), Q/K/V/O with
/// biases (8), LN2 (2).
pub(crate) const BLOCK_FIXED: usize = 12;
pub(crate) const ENCODER_TENSORS: usize = 3;

impl ModelParams {
    /// `(name, kind, shape)` for every tensor, in canonical order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, ParamKind, Vec<usize>)> {
        let d = config.proj_len;
        let w = config.attn_width();
        let kernel = |i, o| ParamKind::Kernel {
            fan_in: i,
            fan_out: o,
        };
        let mut out = vec![
            (
                "patch_encoder.kernel".to_string(),
                kernel(config.patch_dim(), d),
                vec![config.patch_dim(), d],
            ),
            ("patch_encoder.bias".into(), ParamKind::Bias, vec![d]),
            (
                "patch_encoder.position".into(),
                ParamKind::Position,
                vec![config.n_patches(), d],
            ),
        ];
        for b in 0..config.n_blocks {
            let p = format!("block{b}");
            out.push((format!("{p}.ln1.gamma"), ParamKind::Gamma, vec![d]));
            out.push((format!("{p}.ln1.beta"), ParamKind::Beta, vec![d]));
            for proj in ["query", "key", "value"] {
                out.push((format!("{p}.attn.{proj}.kernel"), kernel(d, w), vec![d, w]));
                out.push((format!("{p}.attn.{proj}.bias"), ParamKind::Bias, vec![w]));
            }
            out.push((format!("{p}.attn.output.kernel"), kernel(w, d), vec![w, d]));
            out.push((format!("{p}.attn.output.bias"), ParamKind::Bias, vec![d]));
            out.push((format!("{p}.ln2.gamma"), ParamKind::Gamma, vec![d]));
            out.push((format!("{p}.ln2.beta"), ParamKind::Beta, vec![d]));
            let mut fan_in = d;
            for (j, &width) in config.mlp_dims.iter().enumerate() {
                out.push((
                    format!("{p}.mlp.dense{j}.kernel"),
                    kernel(fan_in, width),
                    vec![fan_in, width],
                ));
                out.push((format!("{p}.mlp.dense{j}.bias"), ParamKind::Bias, vec![width]));
                fan_in = width;
            }
        }
        out.push(("final_ln.gamma".into(), ParamKind::Gamma, vec![d]));
        out.push(("final_ln.beta".into(), ParamKind::Beta, vec![d]));
        out.push((
            "head.kernel".into(),
            kernel(d, config.n_classes),
            vec![d, config.n_classes],
        ));
        out.push(("head.bias".into(), ParamKind::Bias, vec![config.n_classes]));
        out
    }

    pub(crate) fn block_stride(config: &ModelConfig) -> usize {
        BLOCK_FIXED + 2 * config.mlp_dims.len()
    }

    /// Builds parameters from flat tensors in layout order, checking shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        let tensors = layout
            .into_iter()
            .zip(tensors)
            .map(|((name, kind, shape), tensor)| {
                if tensor.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{name}: expected shape {shape:?}, got {:?}",
                        tensor.shape()
                    )));
                }
                Ok(ParamTensor { name, kind, tensor })
            })
            .collect::<Result<_>>()?;
        Ok(ModelParams { config, tensors })
    }

    /// All tensors zero; handy as a gradient accumulator.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|p| vec![0.0; p.tensor.numel()])
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }
}

/// Glorot-uniform kernels, zero biases, `N(0, 0.02^2)` positions, unit
/// gammas and zero betas. Deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, 0.02).expect("valid std");
    let tensors = ModelParams::layout(config)
        .into_iter()
        .map(|(name, kind, shape)| {
            let tensor = match kind {
                ParamKind::Kernel { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-limit..limit))
                }
                ParamKind::Position => Tensor::from_fn(&shape, |_| pos.sample(&mut rng)),
                ParamKind::Gamma => Tensor::full(&shape, 1.0),
                ParamKind::Bias | ParamKind::Beta => Tensor::zeros(&shape),
            };
            ParamTensor { name, kind, tensor }
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}
