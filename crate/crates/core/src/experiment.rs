//! End-to-end protocols built from the lower layers: dataset loading,
//! subject-level train/test, segment-level cross-validation, noise
//! robustness and whole-recording inference.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::autodiff::DropoutRng;
use crate::dsp::{Label, RawRecording};
use crate::error::{Error, Result};
use crate::io::{read_wav, round_to_f32, RunConfig, TfrCache};
use crate::manifest::Manifest;
use crate::model::{init_params, model_forward, ModelParams};
use crate::pipeline::Featurizer;
use crate::train::{
    compute_metrics, evaluate, kfold_random_split, mix_noise_at_snr, split_subject_level,
    train_with_progress, vote, ConfusionMatrix, EpochRecord, Evaluation, Example, MetricsReport,
    NoiseSpec, SubjectSplit, TrainedModel,
};

/// Patchified examples for every readable segment of a manifest.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Images per recording id.
    pub segment_counts: HashMap<String, usize>,
    /// `(recording_id, k)` of segments dropped as numerically constant.
    pub skipped: Vec<(String, usize)>,
    pub warnings: Vec<String>,
    pub cache_hits: usize,
}

impl Dataset {
    /// Examples whose recording belongs to `manifest`, in dataset order.
    pub fn select(&self, manifest: &Manifest) -> Vec<Example> {
        let ids: HashSet<&str> = manifest.entries().iter().map(|e| e.recording_id.as_str()).collect();
        self.examples
            .iter()
            .filter(|e| ids.contains(&*e.recording_id))
            .cloned()
            .collect()
    }
}

pub fn load_recording(entry: &crate::manifest::ManifestEntry) -> Result<RawRecording> {
    read_wav(&entry.path, &entry.recording_id, &entry.subject_id, Some(entry.label))
}

/// Reads and featurizes every manifest entry. Images are f32-rounded whether
/// or not a cache is used, so results do not depend on cache state.
pub fn load_dataset(
    manifest: &Manifest,
    featurizer: &Featurizer,
    cache: Option<&TfrCache>,
    patch_size: usize,
) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for entry in manifest.entries() {
        let rec = load_recording(entry)?;
        let featurized = match cache {
            Some(c) => {
                let (f, hit) = c.featurize(featurizer, &rec)?;
                ds.cache_hits += usize::from(hit);
                f
            }
            None => {
                let mut f = featurizer.featurize(&rec)?;
                f.images.iter_mut().for_each(round_to_f32);
                f
            }
        };
        if let Some(w) = featurized.warning {
            ds.warnings.push(format!("{}: {w}", entry.recording_id));
        }
        ds.skipped
            .extend(featurized.skipped.iter().map(|&k| (entry.recording_id.clone(), k)));
        ds.segment_counts
            .insert(entry.recording_id.clone(), featurized.images.len());
        let subject: Arc<str> = Arc::from(entry.subject_id.as_str());
        for img in &featurized.images {
            ds.examples.push(Example::from_image(
                img,
                entry.label,
                Arc::clone(&subject),
                patch_size,
            )?);
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct SubjectLevelOutcome {
    pub split: SubjectSplit,
    pub trained: TrainedModel,
    pub test: Evaluation,
    pub metrics: MetricsReport,
    pub recording_confusion: ConfusionMatrix,
}

/// Subject-level split, training with validation-based checkpoint
/// selection, then blind evaluation of the selected checkpoint.
pub fn run_subject_level(
    manifest: &Manifest,
    dataset: &Dataset,
    cfg: &RunConfig,
    progress: impl FnMut(&EpochRecord),
) -> Result<SubjectLevelOutcome> {
    let split = split_subject_level(manifest, &cfg.split, Some(&dataset.segment_counts))?;
    let [train_set, val_set, test_set] = split.parts().map(|m| dataset.select(m));
    if test_set.is_empty() {
        return Err(Error::Empty("test partition has no segments".into()));
    }
    let init = init_params(&cfg.model, cfg.seed)?;
    let trained = train_with_progress(init, &train_set, &val_set, &cfg.train, progress)?;
    let test = evaluate(&trained.best, &test_set)?;
    let metrics = test.metrics()?;
    let recording_confusion = test.recording_level();
    Ok(SubjectLevelOutcome {
        split,
        trained,
        test,
        metrics,
        recording_confusion,
    })
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: usize,
    pub test: Evaluation,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct CrossvalOutcome {
    pub folds: Vec<FoldOutcome>,
    /// Sum of the per-fold test confusion matrices.
    pub pooled: ConfusionMatrix,
    pub pooled_metrics: MetricsReport,
}

impl CrossvalOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = format!("fold,n_train,n_val,n_test,best_epoch,tp,tn,fp,fn,{}\n", MetricsReport::CSV_HEADER);
        let mut row = |name: String, n: [usize; 3], best: String, cm: &ConfusionMatrix, m: &MetricsReport| {
            s.push_str(&format!(
                "{name},{},{},{},{best},{},{},{},{},{}\n",
                n[0],
                n[1],
                n[2],
                cm.tp,
                cm.tn,
                cm.fp,
                cm.fn_,
                m.csv_row()
            ));
        };
        for f in &self.folds {
            row(
                f.fold.to_string(),
                [f.n_train, f.n_val, f.test.scores.len()],
                f.best_epoch.to_string(),
                &f.test.confusion,
                &f.metrics,
            );
        }
        let n_test = self.pooled.total();
        row("pooled".into(), [0, 0, n_test], String::new(), &self.pooled, &self.pooled_metrics);
        s
    }
}

/// Segment-level k-fold protocol. Each fold is the test set once; the
/// remaining segments are split again, `crossval_val_fraction` of them
/// serving as the validation set for checkpoint selection.
pub fn run_crossval(
    dataset: &Dataset,
    cfg: &RunConfig,
    mut progress: impl FnMut(usize, &EpochRecord),
) -> Result<CrossvalOutcome> {
    let n = dataset.examples.len();
    let folds = kfold_random_split(n, cfg.split.folds, cfg.seed)?;
    let mut outcomes = Vec::with_capacity(folds.len());
    let mut pooled = ConfusionMatrix::default();
    for (f, test_idx) in folds.iter().enumerate() {
        let rest: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let n_val = (cfg.crossval_val_fraction * rest.len() as f64).round() as usize;
        let (train_idx, val_idx) = rest.split_at(rest.len() - n_val);
        let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.examples[i].clone()).collect::<Vec<_>>();
        let (train_set, val_set, test_set) = (pick(train_idx), pick(val_idx), pick(test_idx));
        let init = init_params(&cfg.model, DropoutRng::derive(cfg.seed, &[5, f as u64]))?;
        let tcfg = crate::train::TrainConfig {
            seed: DropoutRng::derive(cfg.seed, &[6, f as u64]),
            ..cfg.train.clone()
        };
        let trained = train_with_progress(init, &train_set, &val_set, &tcfg, |r| progress(f, r))?;
        let test = evaluate(&trained.best, &test_set)?;
        pooled.tp += test.confusion.tp;
        pooled.tn += test.confusion.tn;
        pooled.fp += test.confusion.fp;
        pooled.fn_ += test.confusion.fn_;
        outcomes.push(FoldOutcome {
            fold: f,
            n_train: train_set.len(),
            n_val: val_set.len(),
            best_epoch: trained.best_epoch,
            metrics: test.metrics()?,
            test,
        });
    }
    Ok(CrossvalOutcome {
        folds: outcomes,
        pooled_metrics: compute_metrics(&pooled)?,
        pooled,
    })
}

/// Per-class accuracy at one noise level; `snr_db` is `None` for the clean
/// baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub snr_db: Option<f64>,
    /// `(correct, total)` indexed by [`Label::index`].
    pub per_class: [(usize, usize); 2],
}

impl NoiseRow {
    pub fn accuracy(&self, label: Label) -> Option<f64> {
        let (c, t) = self.per_class[label.index()];
        (t > 0).then(|| c as f64 / t as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    pub rows: Vec<NoiseRow>,
}

impl NoiseTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("snr_db,class,correct,total,accuracy\n");
        for r in &self.rows {
            let snr = r.snr_db.map_or("clean".to_string(), |v| v.to_string());
            for label in Label::ALL {
                let (c, t) = r.per_class[label.index()];
                let acc = r.accuracy(label).map_or(String::new(), |a| format!("{a:.6}"));
                s.push_str(&format!("{snr},{label},{c},{t},{acc}\n"));
            }
        }
        s
    }
}

/// Classifies every segment of `manifest` after adding noise to the raw
/// segment at each SNR in `snr_grid`, plus a clean pass. The same noise
/// draw is used for a segment across SNR levels; only its scale changes.
pub fn noise_eval(
    params: &ModelParams,
    featurizer: &Featurizer,
    manifest: &Manifest,
    noise: &NoiseSpec,
    snr_grid: &[f64],
    seed: u64,
) -> Result<NoiseTable> {
    let levels: Vec<Option<f64>> = std::iter::once(None)
        .chain(snr_grid.iter().map(|&s| Some(s)))
        .collect();
    let mut rows: Vec<NoiseRow> = levels
        .iter()
        .map(|&snr_db| NoiseRow {
            snr_db,
            per_class: [(0, 0); 2],
        })
        .collect();
    for (r, entry) in manifest.entries().iter().enumerate() {
        let rec = load_recording(entry)?;
        let seg = featurizer.segment(&rec)?;
        for s in &seg.segments {
            let n = noise.generate(s.len(), DropoutRng::derive(seed, &[4, r as u64, s.frame_index as u64]))?;
            for (row, level) in rows.iter_mut().zip(&levels) {
                let input = match level {
                    None => s.clone(),
                    Some(db) => mix_noise_at_snr(s, &n, *db)?,
                };
                let img = match featurizer.image(&input) {
                    Ok(mut img) => {
                        round_to_f32(&mut img);
                        img
                    }
                    Err(Error::DegenerateSegment(_)) => continue,
                    Err(e) => return Err(e),
                };
                let out = model_forward(params, &img, false, 0)?;
                let cell = &mut row.per_class[entry.label.index()];
                cell.1 += 1;
                cell.0 += usize::from(out.predicted_class() == entry.label.index());
            }
        }
    }
    Ok(NoiseTable { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingPrediction {
    pub recording_id: String,
    /// `(k, [p_healthy, p_ild])` per classified segment.
    pub segments: Vec<(usize, [f64; 2])>,
    pub skipped: Vec<usize>,
    pub label: Label,
    pub mean_probs: [f64; 2],
}

/// Full pipeline on one recording, aggregated by majority vote.
pub fn classify_recording(
    params: &ModelParams,
    featurizer: &Featurizer,
    rec: &RawRecording,
) -> Result<RecordingPrediction> {
    let seg = featurizer.segment(rec)?;
    let mut segments = Vec::with_capacity(seg.segments.len());
    let mut skipped = Vec::new();
    let mut votes = [0usize; 2];
    let mut mass = [0.0; 2];
    for s in &seg.segments {
        let img = match featurizer.image(s) {
            Ok(img) => img,
            Err(Error::DegenerateSegment(_)) => {
                skipped.push(s.frame_index);
                continue;
            }
            Err(e) => return Err(e),
        };
        let out = model_forward(params, &img, false, 0)?;
        let p = [out.probs[0], out.probs[1]];
        votes[out.predicted_class()] += 1;
        mass[0] += p[0];
        mass[1] += p[1];
        segments.push((s.frame_index, p));
    }
    if segments.is_empty() {
        return Err(Error::Empty(format!(
            "recording {} has no usable segment",
            rec.recording_id
        )));
    }
    let n = segments.len() as f64;
    Ok(RecordingPrediction {
        recording_id: rec.recording_id.to_string(),
        segments,
        skipped,
        label: vote(votes, mass),
        mean_probs: [mass[0] / n, mass[1] / n],
    })
}
