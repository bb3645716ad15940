use super::params::{ModelParams, BLOCK_FIXED, ENCODER_TENSORS};
use super::ModelConfig;
use crate::autodiff::{DropoutRng, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::tfr::MelTfrImage;

/// Non-overlapping patches of one image, `n_patches x patch_dim`. Patch
/// `k` covers grid cell `(k / G, k % G)`; inside a patch values run over
/// rows, then columns, then channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub data: Tensor,
    pub patch_size: usize,
    pub grid: usize,
    pub channels: usize,
}

pub fn patchify(image: &MelTfrImage, patch_size: usize) -> Result<PatchSet> {
    let c = MelTfrImage::CHANNELS;
    if image.height != image.width {
        return Err(Error::ShapeMismatch(format!(
            "image must be square, got {}x{}",
            image.height, image.width
        )));
    }
    if patch_size == 0 || image.height % patch_size != 0 {
        return Err(Error::InvalidParameter(format!(
            "image size {} is not divisible by patch size {patch_size}",
            image.height
        )));
    }
    if image.pixels.len() != image.height * image.width * c {
        return Err(Error::ShapeMismatch(format!(
            "pixel buffer holds {} values, expected {}",
            image.pixels.len(),
            image.height * image.width * c
        )));
    }
    let p = patch_size;
    let grid = image.height / p;
    let dim = p * p * c;
    let w = image.width;
    let data = Tensor::from_fn(&[grid * grid, dim], |idx| {
        let (k, r) = (idx / dim, idx % dim);
        let (i, j, ch) = (r / (p * c), (r / c) % p, r % c);
        let row = (k / grid) * p + i;
        let col = (k % grid) * p + j;
        image.pixels[(row * w + col) * c + ch]
    });
    Ok(PatchSet {
        data,
        patch_size,
        grid,
        channels: c,
    })
}

/// Inverse of [`patchify`]: returns the `H x W x C` pixel buffer.
pub fn unpatchify(patches: &PatchSet) -> Vec<f64> {
    let (p, g, c) = (patches.patch_size, patches.grid, patches.channels);
    let side = p * g;
    let dim = p * p * c;
    let src = patches.data.data();
    let mut out = vec![0.0; side * side * c];
    for (k, patch) in src.chunks(dim).enumerate() {
        for (r, &v) in patch.iter().enumerate() {
            let (i, j, ch) = (r / (p * c), (r / c) % p, r % c);
            let row = (k / g) * p + i;
            let col = (k % g) * p + j;
            out[(row * side + col) * c + ch] = v;
        }
    }
    out
}

/// Linear projection of each patch plus a learned per-position vector.
pub fn encode_patches<'t>(
    patches: Var<'t>,
    kernel: Var<'t>,
    bias: Var<'t>,
    position: Var<'t>,
) -> Result<Var<'t>> {
    patches.matmul(kernel)?.add_bias(bias)?.add(position)
}

/// Handles to one transformer block's parameters.
#[derive(Debug, Clone)]
pub struct BlockVars<'t> {
    pub ln1: (Var<'t>, Var<'t>),
    pub query: (Var<'t>, Var<'t>),
    pub key: (Var<'t>, Var<'t>),
    pub value: (Var<'t>, Var<'t>),
    pub output: (Var<'t>, Var<'t>),
    pub ln2: (Var<'t>, Var<'t>),
    pub mlp: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> BlockVars<'t> {
    /// Slices one block out of the canonical parameter order.
    pub fn from_slice(vars: &[Var<'t>], n_mlp: usize) -> Result<Self> {
        if vars.len() != BLOCK_FIXED + 2 * n_mlp {
            return Err(Error::ShapeMismatch(format!(
                "block needs {} tensors, got {}",
                BLOCK_FIXED + 2 * n_mlp,
                vars.len()
            )));
        }
        let pair = |i: usize| (vars[i], vars[i + 1]);
        Ok(BlockVars {
            ln1: pair(0),
            query: pair(2),
            key: pair(4),
            value: pair(6),
            output: pair(8),
            ln2: pair(10),
            mlp: (0..n_mlp).map(|j| pair(BLOCK_FIXED + 2 * j)).collect(),
        })
    }
}

fn dense<'t>(x: Var<'t>, (k, b): (Var<'t>, Var<'t>)) -> Result<Var<'t>> {
    x.matmul(k)?.add_bias(b)
}

/// Scaled dot-product attention over `n_heads` heads of width `head_dim`.
/// Returns the projected output and each head's `n x n` attention matrix.
pub fn mha_forward<'t>(
    x: Var<'t>,
    block: &BlockVars<'t>,
    n_heads: usize,
    head_dim: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let q = dense(x, block.query)?;
    let k = dense(x, block.key)?;
    let v = dense(x, block.value)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let s = h * head_dim;
        let qh = q.slice_cols(s, head_dim)?;
        let kh = k.slice_cols(s, head_dim)?;
        let vh = v.slice_cols(s, head_dim)?;
        let a = qh.matmul(kh.transpose()?)?.scale(scale).softmax();
        heads.push(a.matmul(vh)?);
        attn.push(a);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        Var::concat_cols(&heads)?
    };
    Ok((dense(cat, block.output)?, attn))
}

/// Pre-norm block: `Y1 = Y + Drop(MHA(LN(Y)))`, `Y' = Y1 + MLP(LN(Y1))`,
/// where every MLP layer is dense, GELU, dropout.
pub fn transformer_block<'t>(
    y: Var<'t>,
    block: &BlockVars<'t>,
    config: &ModelConfig,
    training: bool,
    rng: &DropoutRng,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let h = y.layer_norm(block.ln1.0, block.ln1.1, LAYER_NORM_EPS)?;
    let (m, attn) = mha_forward(h, block, config.n_heads, config.head_dim)?;
    let y1 = y.add(m.dropout(config.dropout, training, rng)?)?;
    let mut z = y1.layer_norm(block.ln2.0, block.ln2.1, LAYER_NORM_EPS)?;
    for &layer in &block.mlp {
        z = dense(z, layer)?
            .gelu()
            .dropout(config.dropout, training, rng)?;
    }
    Ok((y1.add(z)?, attn))
}

/// Every node of interest from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars<'t> {
    /// Parameter leaves in canonical order.
    pub params: Vec<Var<'t>>,
    pub logits: Var<'t>,
    pub probs: Var<'t>,
    pub embedding: Var<'t>,
    /// `attention[block][head]`, each `n_patches x n_patches`.
    pub attention: Vec<Vec<Var<'t>>>,
}

/// Records a full forward pass on `tape` with parameters as gradient leaves.
pub fn forward_on_tape<'t>(
    tape: &'t Tape,
    params: &ModelParams,
    patches: &Tensor,
    training: bool,
    rng: &DropoutRng,
) -> Result<ForwardVars<'t>> {
    let config = &params.config;
    let expect = [config.n_patches(), config.patch_dim()];
    if patches.shape() != expect {
        return Err(Error::ShapeMismatch(format!(
            "patches {:?}, expected {expect:?}",
            patches.shape()
        )));
    }
    let vars: Vec<Var<'t>> = params
        .tensors
        .iter()
        .map(|p| tape.leaf(p.tensor.clone()))
        .collect();
    let x = tape.constant(patches.clone());
    let mut y = encode_patches(x, vars[0], vars[1], vars[2])?;

    let stride = ModelParams::block_stride(config);
    let mut attention = Vec::with_capacity(config.n_blocks);
    for b in 0..config.n_blocks {
        let start = ENCODER_TENSORS + b * stride;
        let block = BlockVars::from_slice(&vars[start..start + stride], config.mlp_dims.len())?;
        let (out, attn) = transformer_block(y, &block, config, training, rng)?;
        y = out;
        attention.push(attn);
    }
    let tail = ENCODER_TENSORS + config.n_blocks * stride;
    let z = y.layer_norm(vars[tail], vars[tail + 1], LAYER_NORM_EPS)?;
    let embedding = z.mean_rows();
    let logits = dense(embedding, (vars[tail + 2], vars[tail + 3]))?;
    let probs = logits.sigmoid();
    Ok(ForwardVars {
        params: vars,
        logits,
        probs,
        embedding,
        attention,
    })
}

/// Plain-value result of [`model_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    /// Pooled representation fed to the head, length `proj_len`.
    pub embedding: Vec<f64>,
    /// One `[n_heads, n_patches, n_patches]` tensor per block.
    pub attention: Vec<Tensor>,
}

impl ModelOutput {
    /// Index of the highest probability (first on ties).
    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Runs the classifier on one image. `dropout_seed` only matters when
/// `training` is set.
pub fn model_forward(
    params: &ModelParams,
    image: &MelTfrImage,
    training: bool,
    dropout_seed: u64,
) -> Result<ModelOutput> {
    let patches = patchify(image, params.config.patch_size)?;
    forward_patches(params, &patches.data, training, dropout_seed)
}

pub(crate) fn forward_patches(
    params: &ModelParams,
    patches: &Tensor,
    training: bool,
    dropout_seed: u64,
) -> Result<ModelOutput> {
    let tape = Tape::new();
    let rng = DropoutRng::new(dropout_seed);
    let fv = forward_on_tape(&tape, params, patches, training, &rng)?;
    let attention = fv
        .attention
        .iter()
        .map(|heads| {
            let n = params.config.n_patches();
            let mut data = Vec::with_capacity(heads.len() * n * n);
            for h in heads {
                data.extend_from_slice(h.value().data());
            }
            Tensor::new(vec![heads.len(), n, n], data)
        })
        .collect::<Result<_>>()?;
    Ok(ModelOutput {
        probs: fv.probs.value().into_data(),
        logits: fv.logits.value().into_data(),
        embedding: fv.embedding.value().into_data(),
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::model::ParamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_image(seed: u64, size: usize) -> MelTfrImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MelTfrImage {
            pixels: (0..size * size * 3).map(|_| rng.gen()).collect(),
            height: size,
            width: size,
            recording_id: Arc::from("r"),
            frame_index: 0,
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            patch_size: 4,
            proj_len: 8,
            n_blocks: 2,
            n_heads: 2,
            head_dim: 4,
            mlp_dims: vec![12, 8],
            ..Default::default()
        }
    }

    #[test]
    fn patchify_layout_and_round_trip() {
        let img = random_image(1, 64);
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.data.shape(), &[64, 192]);
        // Patch 9 is grid cell (1, 1); element (i=2, j=3, c=1).
        let v = p.data.data()[9 * 192 + (2 * 8 + 3) * 3 + 1];
        assert_eq!(v, img.pixel(8 + 2, 8 + 3)[1]);
        assert_eq!(unpatchify(&p), img.pixels);
        assert!(patchify(&img, 7).is_err());
    }

    #[test]
    fn output_shapes_and_ranges() {
        let params = init_params(&ModelConfig::default(), 3).unwrap();
        let out = model_forward(&params, &random_image(2, 64), false, 0).unwrap();
        assert_eq!(out.probs.len(), 2);
        assert_eq!(out.embedding.len(), 64);
        assert_eq!(out.attention.len(), 4);
        assert_eq!(out.attention[0].shape(), &[4, 64, 64]);
        assert!(out.probs.iter().all(|&p| p > 0.0 && p < 1.0));
        for t in &out.attention {
            for row in t.data().chunks(64) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    fn zero_block_weights(params: &mut ModelParams, block: usize) {
        let prefix = format!("block{block}.");
        for t in params.tensors.iter_mut() {
            if t.name.starts_with(&prefix)
                && matches!(t.kind, ParamKind::Kernel { .. } | ParamKind::Bias)
            {
                t.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let config = ModelConfig::default();
        let mut params = init_params(&config, 4).unwrap();
        zero_block_weights(&mut params, 0);
        let tape = Tape::new();
        let rng = DropoutRng::new(0);
        let x = Tensor::from_fn(&[64, 64], |i| ((i * 37) % 101) as f64 / 50.0 - 1.0);
        let y = tape.constant(x.clone());
        let vars: Vec<Var> = params
            .tensors
            .iter()
            .map(|p| tape.leaf(p.tensor.clone()))
            .collect();
        let stride = ModelParams::block_stride(&config);
        let block = BlockVars::from_slice(&vars[3..3 + stride], 2).unwrap();
        for training in [false, true] {
            let (out, attn) = transformer_block(y, &block, &config, training, &rng).unwrap();
            assert_eq!(out.value(), x);
            // Zero query and key kernels give uniform attention.
            for a in attn {
                assert!(a.value().data().iter().all(|&v| (v - 1.0 / 64.0).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn encoding_with_zero_weights_is_positions() {
        let tape = Tape::new();
        let pos = Tensor::from_fn(&[64, 64], |i| i as f64 * 0.01);
        let y = encode_patches(
            tape.constant(Tensor::zeros(&[64, 192])),
            tape.constant(Tensor::zeros(&[192, 64])),
            tape.constant(Tensor::zeros(&[64])),
            tape.constant(pos.clone()),
        )
        .unwrap();
        assert_eq!(y.value(), pos);
    }

    fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
        let w = t.shape()[1];
        let d = t.data();
        Tensor::from_fn(t.shape(), |i| d[perm[i / w] * w + i % w])
    }

    #[test]
    fn joint_patch_and_position_permutation_is_invisible_after_pooling() {
        let config = ModelConfig::default();
        let params = init_params(&config, 9).unwrap();
        let patches = patchify(&random_image(5, 64), 8).unwrap().data;
        let mut perm: Vec<usize> = (0..64).collect();
        perm.reverse();
        perm.swap(3, 40);

        // Encoding commutes with the permutation.
        let tape = Tape::new();
        let enc = |x: &Tensor, pos: &Tensor| {
            encode_patches(
                tape.constant(x.clone()),
                tape.constant(params.tensors[0].tensor.clone()),
                tape.constant(params.tensors[1].tensor.clone()),
                tape.constant(pos.clone()),
            )
            .unwrap()
            .value()
        };
        let pos = &params.tensors[2].tensor;
        let a = enc(&patches, pos);
        let b = enc(&permute_rows(&patches, &perm), &permute_rows(pos, &perm));
        assert_eq!(permute_rows(&a, &perm), b);

        let mut permuted = params.clone();
        permuted.tensors[2].tensor = permute_rows(pos, &perm);
        let a = forward_patches(&params, &patches, false, 0).unwrap();
        let b = forward_patches(&permuted, &permute_rows(&patches, &perm), false, 0).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_seed_only_matters_in_training() {
        let params = init_params(&small_config(), 1).unwrap();
        let img = random_image(3, 16);
        let e1 = model_forward(&params, &img, false, 1).unwrap();
        let e2 = model_forward(&params, &img, false, 2).unwrap();
        assert_eq!(e1, e2);
        let t1 = model_forward(&params, &img, true, 1).unwrap();
        let t1b = model_forward(&params, &img, true, 1).unwrap();
        let t2 = model_forward(&params, &img, true, 2).unwrap();
        assert_eq!(t1, t1b);
        assert_ne!(t1.probs, t2.probs);
        assert_ne!(t1.probs, e1.probs);
    }

    fn loss_of(params: &ModelParams, patches: &Tensor, target: &[f64]) -> f64 {
        let tape = Tape::new();
        let rng = DropoutRng::new(0);
        let fv = forward_on_tape(&tape, params, patches, false, &rng).unwrap();
        fv.probs.bce(target).unwrap().value().data()[0]
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let config = ModelConfig::default();
        let mut params = init_params(&config, 11).unwrap();
        // Non-trivial biases, gammas and betas so every path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for t in params.tensors.iter_mut() {
            if !matches!(t.kind, ParamKind::Kernel { .. }) {
                t.tensor
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v += rng.gen_range(-0.1..0.1));
            }
        }
        let patches = patchify(&random_image(13, 64), 8).unwrap().data;
        let target = [0.0, 1.0];

        let tape = Tape::new();
        let drng = DropoutRng::new(0);
        let fv = forward_on_tape(&tape, &params, &patches, false, &drng).unwrap();
        let loss = fv.probs.bce(&target).unwrap();
        tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = fv.params.iter().map(|v| v.grad().unwrap()).collect();

        let h = 1e-5;
        for _ in 0..20 {
            let ti = rng.gen_range(0..params.tensors.len());
            let ei = rng.gen_range(0..params.tensors[ti].tensor.numel());
            let orig = params.tensors[ti].tensor.data()[ei];
            params.tensors[ti].tensor.data_mut()[ei] = orig + h;
            let up = loss_of(&params, &patches, &target);
            params.tensors[ti].tensor.data_mut()[ei] = orig - h;
            let down = loss_of(&params, &patches, &target);
            params.tensors[ti].tensor.data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[ti].data()[ei];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
            assert!(
                rel < 1e-4,
                "{}[{ei}]: analytic {analytic} numeric {numeric}",
                params.tensors[ti].name
            );
        }
    }

    #[test]
    fn wrong_patch_shape_is_rejected() {
        let params = init_params(&small_config(), 0).unwrap();
        assert!(forward_patches(&params, &Tensor::zeros(&[16, 47]), false, 0).is_err());
    }
}
