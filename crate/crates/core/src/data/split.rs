use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::error::{Error, Result};
use crate::seeding::{self, domain};

/// Result of [`filter_min_logs`]: the surviving interactions with students
/// re-indexed densely, plus the old id of each new student index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Filtered {
    pub interactions: Vec<Interaction>,
    pub kept_students: Vec<usize>,
}

/// Keeps students with at least `min_logs` interactions. Survivors are
/// renumbered `0..k` in order of their old ids.
pub fn filter_min_logs(interactions: &[Interaction], min_logs: usize) -> Filtered {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for it in interactions {
        *counts.entry(it.student).or_default() += 1;
    }
    let kept_students: Vec<usize> = counts
        .iter()
        .filter(|(_, &n)| n >= min_logs)
        .map(|(&s, _)| s)
        .collect();
    let renumber: BTreeMap<usize, usize> = kept_students
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    let interactions = interactions
        .iter()
        .filter_map(|it| {
            renumber
                .get(&it.student)
                .map(|&s| Interaction::new(s, it.exercise, it.correct))
        })
        .collect();
    Filtered {
        interactions,
        kept_students,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Validation(format!("split ratios out of [0,1]: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for a student with `t` logs: val and test
    /// are floored, train takes the remainder.
    pub fn counts(&self, t: usize) -> (usize, usize, usize) {
        // the epsilon absorbs products like 0.1 * 30 landing a hair below an integer
        let floor = |r: f64| ((r * t as f64) + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test);
        (t - val - test, val, test)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

fn group_by_student(interactions: &[Interaction]) -> BTreeMap<usize, Vec<Interaction>> {
    let mut groups: BTreeMap<usize, Vec<Interaction>> = BTreeMap::new();
    for it in interactions {
        groups.entry(it.student).or_default().push(*it);
    }
    groups
}

/// Per-student shuffled partition into train/val/test. Students with fewer
/// than three logs cannot fill all three parts and are skipped.
pub fn split_per_student(interactions: &[Interaction], ratios: SplitRatios, seed: u64) -> Result<DataSplit> {
    ratios.validate()?;
    let mut out = DataSplit::default();
    for (student, mut logs) in group_by_student(interactions) {
        if logs.len() < 3 {
            warn!(
                "student {student} has {} logs; skipped by the split",
                logs.len()
            );
            continue;
        }
        let mut rng = seeding::stream(seed, &[domain::SPLIT, student as u64]);
        logs.shuffle(&mut rng);
        let (_, val, test) = ratios.counts(logs.len());
        out.val.extend_from_slice(&logs[..val]);
        out.test.extend_from_slice(&logs[val..val + test]);
        out.train.extend_from_slice(&logs[val + test..]);
    }
    Ok(out)
}

/// Keeps a `fraction` of each student's logs (at least one), chosen by a
/// seeded shuffle. Used to sparsify the training split.
pub fn subsample_per_student(train: &[Interaction], fraction: f64, seed: u64) -> Result<Vec<Interaction>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "train fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(train.to_vec());
    }
    let mut out = Vec::new();
    for (student, mut logs) in group_by_student(train) {
        let mut rng = seeding::stream(seed, &[domain::SUBSAMPLE, student as u64]);
        logs.shuffle(&mut rng);
        let keep = ((fraction * logs.len() as f64 + 1e-9).floor() as usize).max(1);
        out.extend_from_slice(&logs[..keep]);
    }
    Ok(out)
}
