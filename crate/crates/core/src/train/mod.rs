//! Splitting, optimization, evaluation metrics and noise robustness.

mod eval;
mod fit;
mod metrics;
mod noise;
mod optim;
mod split;

use std::sync::Arc;

pub use eval::{bce_loss, evaluate, score_example, vote, Evaluation, SegmentScore};
pub use fit::{
    example_gradient, train, train_with_progress, EpochRecord, History, TrainConfig, TrainedModel,
};
pub use metrics::{compute_metrics, roc_auc, ConfusionMatrix, MetricsReport, RocCurve};
pub use noise::{
    measured_snr_db, mix_noise_at_snr, noise_scale, power, NoiseKind, NoiseSpec, MAX_SNR_DB,
};
pub use optim::{Optimizer, OptimizerKind};
pub use split::{kfold_random_split, split_subject_level, SplitMode, SplitSpec, SubjectSplit};

use crate::autodiff::Tensor;
use crate::dsp::Label;
use crate::error::Result;
use crate::model::patchify;
use crate::tfr::MelTfrImage;

/// One labelled, patchified segment image.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub patches: Tensor,
    pub label: Label,
    pub recording_id: Arc<str>,
    pub subject_id: Arc<str>,
    pub frame_index: usize,
}

impl Example {
    pub fn from_image(
        image: &MelTfrImage,
        label: Label,
        subject_id: Arc<str>,
        patch_size: usize,
    ) -> Result<Self> {
        Ok(Example {
            patches: patchify(image, patch_size)?.data,
            label,
            recording_id: Arc::clone(&image.recording_id),
            subject_id,
            frame_index: image.frame_index,
        })
    }
}
