use std::collections::BTreeMap;
use std::sync::Arc;

use super::metrics::{compute_metrics, roc_auc, ConfusionMatrix, MetricsReport};
use super::Example;
use crate::autodiff::{DropoutRng, Tape};
use crate::dsp::Label;
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScore {
    pub recording_id: Arc<str>,
    pub frame_index: usize,
    pub truth: Label,
    /// Sigmoid outputs, indexed by [`Label::index`].
    pub probs: [f64; 2],
    pub embedding: Vec<f64>,
}

impl SegmentScore {
    /// Arg-max of the two outputs; a tie goes to Healthy.
    pub fn predicted(&self) -> Label {
        Label::from_index(usize::from(self.probs[1] > self.probs[0]))
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub scores: Vec<SegmentScore>,
    pub mean_loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        (self.confusion.tp + self.confusion.tn) as f64 / self.confusion.total() as f64
    }

    /// Segment-level metrics plus one-vs-rest AUC per class when both
    /// classes are present.
    pub fn metrics(&self) -> Result<MetricsReport> {
        let mut m = compute_metrics(&self.confusion)?;
        let is_ild: Vec<bool> = self.scores.iter().map(|s| s.truth == Label::Ild).collect();
        let ild: Vec<f64> = self.scores.iter().map(|s| s.probs[1]).collect();
        let healthy: Vec<f64> = self.scores.iter().map(|s| s.probs[0]).collect();
        let not_ild: Vec<bool> = is_ild.iter().map(|b| !b).collect();
        m.auc_ild = roc_auc(&ild, &is_ild).ok().map(|r| r.auc);
        m.auc_healthy = roc_auc(&healthy, &not_ild).ok().map(|r| r.auc);
        Ok(m)
    }

    /// Per-recording majority vote over segment predictions. Ties fall back
    /// to the larger mean sigmoid output, then to Healthy.
    pub fn recording_level(&self) -> ConfusionMatrix {
        let mut groups: BTreeMap<&str, (Label, [usize; 2], [f64; 2])> = BTreeMap::new();
        for s in &self.scores {
            let g = groups
                .entry(&s.recording_id)
                .or_insert((s.truth, [0, 0], [0.0, 0.0]));
            g.1[s.predicted().index()] += 1;
            g.2[0] += s.probs[0];
            g.2[1] += s.probs[1];
        }
        ConfusionMatrix::from_pairs(
            groups
                .into_values()
                .map(|(truth, votes, mass)| (truth, vote(votes, mass))),
        )
    }

    pub fn scores_csv(&self) -> String {
        let mut s = String::from("recording_id,k,label,p_healthy,p_ild,predicted\n");
        for r in &self.scores {
            s.push_str(&format!(
                "{},{},{},{:.9},{:.9},{}\n",
                r.recording_id,
                r.frame_index,
                r.truth,
                r.probs[0],
                r.probs[1],
                r.predicted()
            ));
        }
        s
    }
}

/// Majority label from per-class vote counts, falling back to the larger
/// summed output and then to Healthy.
pub fn vote(votes: [usize; 2], mass: [f64; 2]) -> Label {
    match votes[1].cmp(&votes[0]) {
        std::cmp::Ordering::Greater => Label::Ild,
        std::cmp::Ordering::Less => Label::Healthy,
        std::cmp::Ordering::Equal if mass[1] > mass[0] => Label::Ild,
        std::cmp::Ordering::Equal => Label::Healthy,
    }
}

/// Inference-mode scores for one example.
pub fn score_example(params: &ModelParams, ex: &Example) -> Result<(SegmentScore, f64)> {
    let tape = Tape::new();
    let rng = DropoutRng::new(0);
    let fv = forward_on_tape(&tape, params, &ex.patches, false, &rng)?;
    let loss = fv.probs.bce(&ex.label.one_hot())?.value().data()[0];
    let p = fv.probs.value().into_data();
    Ok((
        SegmentScore {
            recording_id: Arc::clone(&ex.recording_id),
            frame_index: ex.frame_index,
            truth: ex.label,
            probs: [p[0], p[1]],
            embedding: fv.embedding.value().into_data(),
        },
        loss,
    ))
}

/// Classifies every example by arg-max, accumulating the confusion matrix
/// with ILD as positive.
pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let mut confusion = ConfusionMatrix::default();
    let mut scores = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for ex in examples {
        let (s, l) = score_example(params, ex)?;
        confusion.record(s.truth, s.predicted());
        loss += l;
        scores.push(s);
    }
    Ok(Evaluation {
        confusion,
        scores,
        mean_loss: loss / examples.len() as f64,
    })
}

/// Mean binary cross-entropy over samples and output units, with
/// probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in probs.iter().zip(targets) {
        for j in 0..2 {
            let q = p[j].clamp(1e-7, 1.0 - 1e-7);
            sum -= t[j] * q.ln() + (1.0 - t[j]) * (1.0 - q).ln();
        }
    }
    Ok(sum / (2 * probs.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::train::Example;
    use crate::autodiff::Tensor;

    fn examples(labels: &[Label]) -> Vec<Example> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Example {
                patches: Tensor::from_fn(&[64, 192], |j| ((i * 31 + j) % 17) as f64 / 17.0),
                label,
                recording_id: Arc::from(format!("rec{}", i / 2).as_str()),
                subject_id: Arc::from("s"),
                frame_index: i % 2,
            })
            .collect()
    }

    fn constant_predictor(bias: [f64; 2]) -> ModelParams {
        let mut p = init_params(&ModelConfig { n_blocks: 1, ..Default::default() }, 0).unwrap();
        p.get_mut("head.kernel").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        p.get_mut("head.bias").unwrap().data_mut().copy_from_slice(&bias);
        p
    }

    #[test]
    fn constant_healthy_predictor() {
        let ex = examples(&[Label::Ild, Label::Ild, Label::Healthy, Label::Ild, Label::Healthy]);
        let ev = evaluate(&constant_predictor([20.0, -20.0]), &ex).unwrap();
        let m = ev.metrics().unwrap();
        assert_eq!(m.sns, Some(0.0));
        assert_eq!(m.spf, Some(1.0));
        assert_eq!(m.pre, None);
        assert_eq!(ev.confusion, ConfusionMatrix { tp: 0, tn: 2, fp: 0, fn_: 3 });
        // Every score ties, so AUC is one half.
        assert_eq!(m.auc_ild, Some(0.5));
        for s in &ev.scores {
            assert_eq!(s.embedding.len(), 64);
        }
    }

    #[test]
    fn all_correct_has_empty_off_diagonal() {
        let ex = examples(&[Label::Ild, Label::Ild]);
        let ev = evaluate(&constant_predictor([-20.0, 20.0]), &ex).unwrap();
        assert_eq!((ev.confusion.fp, ev.confusion.fn_), (0, 0));
        assert_eq!(ev.accuracy(), 1.0);
        assert!(ev.mean_loss < 1e-6);
        assert!(evaluate(&constant_predictor([0.0, 0.0]), &[]).is_err());
    }

    #[test]
    fn recording_vote() {
        let ex = examples(&[Label::Ild, Label::Ild, Label::Healthy, Label::Healthy]);
        let mut ev = evaluate(&constant_predictor([-20.0, 20.0]), &ex).unwrap();
        // rec0: two ILD votes. rec1: one each; mass decides.
        ev.scores[2].probs = [0.9, 0.1];
        ev.scores[3].probs = [0.3, 0.6];
        assert_eq!(ev.recording_level(), ConfusionMatrix { tp: 1, tn: 1, fp: 0, fn_: 0 });
        ev.scores[3].probs = [0.05, 0.99];
        assert_eq!(ev.recording_level(), ConfusionMatrix { tp: 1, tn: 0, fp: 1, fn_: 0 });
        assert_eq!(ev.scores_csv().lines().count(), 5);
    }

    #[test]
    fn bce_reference_values() {
        let ln2 = bce_loss(&[[0.5, 0.5]], &[[1.0, 0.0]]).unwrap();
        assert!((ln2 - std::f64::consts::LN_2).abs() < 1e-15);
        let perfect = bce_loss(&[[1.0, 0.0], [0.0, 1.0]], &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(perfect < 1e-6 && perfect > 0.0);
        assert!(bce_loss(&[], &[]).is_err());
    }

    #[test]
    fn bce_matches_tape_gradient() {
        use crate::autodiff::Tape;
        let p = [0.3, 0.8];
        let t = [0.0, 1.0];
        let tape = Tape::new();
        let v = tape.leaf(Tensor::new(vec![1, 2], p.to_vec()).unwrap());
        let loss = v.bce(&t).unwrap();
        tape.backward(loss).unwrap();
        let g = v.grad().unwrap();
        assert!((loss.value().data()[0] - bce_loss(&[p], &[t]).unwrap()).abs() < 1e-15);
        let h = 1e-6;
        for j in 0..2 {
            let mut up = p;
            up[j] += h;
            let mut dn = p;
            dn[j] -= h;
            let num = (bce_loss(&[up], &[t]).unwrap() - bce_loss(&[dn], &[t]).unwrap()) / (2.0 * h);
            assert!((num - g.data()[j]).abs() / num.abs() < 1e-6);
        }
    }
}
