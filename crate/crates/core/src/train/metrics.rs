use serde::Serialize;

use crate::dsp::Label;
use crate::error::{Error, Result};

/// Segment counts with ILD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Ild, Label::Ild) => self.tp += 1,
            (Label::Healthy, Label::Healthy) => self.tn += 1,
            (Label::Healthy, Label::Ild) => self.fp += 1,
            (Label::Ild, Label::Healthy) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The matrix obtained by inverting every prediction.
    pub fn flipped(&self) -> Self {
        ConfusionMatrix {
            tp: self.fn_,
            tn: self.fp,
            fp: self.tn,
            fn_: self.tp,
        }
    }
}

/// Metric values; `None` marks a ratio whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MetricsReport {
    pub acc: Option<f64>,
    pub sns: Option<f64>,
    pub spf: Option<f64>,
    pub pre: Option<f64>,
    pub is: Option<f64>,
    pub fs: Option<f64>,
    /// Fraction of ILD segments predicted Healthy.
    pub ild_miss_rate: Option<f64>,
    /// Fraction of Healthy segments predicted ILD.
    pub healthy_miss_rate: Option<f64>,
    pub auc_ild: Option<f64>,
    pub auc_healthy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::Empty("confusion matrix has no entries".into()));
    }
    let sns = ratio(cm.tp, cm.tp + cm.fn_);
    let spf = ratio(cm.tn, cm.tn + cm.fp);
    let pre = ratio(cm.tp, cm.tp + cm.fp);
    let fs = match (pre, sns) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(MetricsReport {
        acc: ratio(cm.tp + cm.tn, cm.total()),
        sns,
        spf,
        pre,
        is: sns.zip(spf).map(|(a, b)| (a + b) / 2.0),
        fs,
        ild_miss_rate: ratio(cm.fn_, cm.tp + cm.fn_),
        healthy_miss_rate: ratio(cm.fp, cm.tn + cm.fp),
        auc_ild: None,
        auc_healthy: None,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "acc,sns,spf,pre,is,fs,ild_miss_rate,healthy_miss_rate,auc_ild,auc_healthy";

    /// One CSV row; undefined values are empty cells.
    pub fn csv_row(&self) -> String {
        [
            self.acc,
            self.sns,
            self.spf,
            self.pre,
            self.is,
            self.fs,
            self.ild_miss_rate,
            self.healthy_miss_rate,
            self.auc_ild,
            self.auc_healthy,
        ]
        .map(cell)
        .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            s.push_str(&format!("{x:.6},{y:.6}\n"));
        }
        s
    }
}

/// Midrank-based AUC (the Mann-Whitney statistic), with ties counting one
/// half, together with the ROC curve traced over all distinct thresholds.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidParameter(
            "ROC needs at least one sample of each class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let threshold = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == threshold {
            if positive[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(RocCurve { points, auc })
}
