use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::DropoutRng;
use crate::dsp::Label;
use crate::error::{Error, Result};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    SubjectLevel,
    RandomSegment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::SubjectLevel,
            fractions: [0.7, 0.1, 0.2],
            folds: 5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!(
                "fractions {:?} must be in [0, 1] and sum to 1",
                self.fractions
            )));
        }
        Ok(())
    }
}

/// Train, validation and test manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSplit {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

impl SubjectSplit {
    pub fn parts(&self) -> [&Manifest; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Assigns whole subjects to partitions, class by class.
///
/// Subjects of each class are shuffled with the seeded generator and then
/// handed out one at a time to the partition whose segment-count deficit
/// (target minus assigned) is largest; ties go to the earlier partition.
/// When the subjects left equal the partitions still empty, each of those
/// partitions is guaranteed one. Partitions with fraction 0 receive none.
///
/// `segment_counts` maps recording id to segment count; missing ids count 1.
pub fn split_subject_level(
    manifest: &Manifest,
    spec: &SplitSpec,
    segment_counts: Option<&HashMap<String, usize>>,
) -> Result<SubjectSplit> {
    spec.validate()?;
    let mut weight: BTreeMap<&str, (Label, usize)> = BTreeMap::new();
    for e in manifest.entries() {
        let w = segment_counts
            .and_then(|c| c.get(&e.recording_id).copied())
            .unwrap_or(1);
        weight.entry(&e.subject_id).or_insert((e.label, 0)).1 += w;
    }
    let active: Vec<usize> = (0..3).filter(|&i| spec.fractions[i] > 0.0).collect();
    let mut assigned: [HashSet<String>; 3] = Default::default();

    for label in Label::ALL {
        let mut subjects: Vec<(&str, usize)> = weight
            .iter()
            .filter(|(_, (l, _))| *l == label)
            .map(|(s, (_, w))| (*s, *w))
            .collect();
        if subjects.is_empty() {
            continue;
        }
        if subjects.len() < active.len() {
            return Err(Error::Split(format!(
                "class {label} has {} subjects, fewer than the {} partitions",
                subjects.len(),
                active.len()
            )));
        }
        let seed = DropoutRng::derive(spec.seed, &[label.index() as u64]);
        subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let total: usize = subjects.iter().map(|(_, w)| w).sum();
        let target = spec.fractions.map(|f| f * total as f64);
        let mut got = [0usize; 3];
        let mut count = [0usize; 3];
        for (i, (subject, w)) in subjects.iter().enumerate() {
            let left = subjects.len() - i;
            let empty: Vec<usize> = active.iter().copied().filter(|&p| count[p] == 0).collect();
            let pool = if left <= empty.len() { &empty } else { &active };
            let mut best = pool[0];
            for &p in pool {
                if target[p] - got[p] as f64 > target[best] - got[best] as f64 {
                    best = p;
                }
            }
            got[best] += w;
            count[best] += 1;
            assigned[best].insert(subject.to_string());
        }
    }
    let [train, val, test] = assigned.map(|s| manifest.filter_subjects(&s));
    Ok(SubjectSplit { train, val, test })
}

/// Shuffles `0..n` and deals it into `folds` folds whose sizes differ by at
/// most one (the earlier folds take the remainder).
pub fn kfold_random_split(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Split(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Split(format!("{n} items cannot fill {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}
