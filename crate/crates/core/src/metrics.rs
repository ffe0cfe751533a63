//! Prediction metrics and mastery recovery.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACC_THRESHOLD: f64 = 0.5;

fn check_lengths(preds: &[f64], labels: &[bool], metric: &'static str) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{metric}: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric(metric));
    }
    Ok(())
}

pub fn accuracy(preds: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(preds, labels, "accuracy")?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| (p >= ACC_THRESHOLD) == l)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn rmse(preds: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(preds, labels, "rmse")?;
    let sse: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            let d = p - f64::from(u8::from(l));
            d * d
        })
        .sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// Ranks starting at 1, ties sharing their average rank. Returned doubled so
/// that they stay integral.
fn doubled_average_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; their mean doubled is i+j+2
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve by the rank-sum statistic, ties counted as half.
pub fn auc(preds: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(preds, labels, "auc")?;
    if preds.iter().any(|p| p.is_nan()) {
        return Err(Error::Numeric("NaN prediction".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auc"));
    }
    let ranks = doubled_average_ranks(preds);
    let rank_sum: u64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(&r, _)| r).sum();
    // doubled (wins + ties / 2)
    let doubled_u = rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / 2.0 / (pos * neg) as f64)
}

/// Spearman correlation with average ranks; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let ra: Vec<f64> = doubled_average_ranks(a).into_iter().map(|r| r as f64 / 2.0).collect();
    let rb: Vec<f64> = doubled_average_ranks(b).into_iter().map(|r| r as f64 / 2.0).collect();
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Mean per-student rank correlation between diagnosed and true mastery.
/// Students whose vectors are constant on either side are skipped.
pub fn mastery_recovery(diagnosed: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if diagnosed.len() != truth.len() {
        return Err(Error::Validation(format!(
            "mastery recovery: {} diagnosed students vs {} in ground truth",
            diagnosed.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (s, (d, t)) in diagnosed.iter().zip(truth).enumerate() {
        if d.len() != t.len() {
            return Err(Error::Validation(format!(
                "mastery recovery: student {s} has {} diagnosed concepts vs {}",
                d.len(),
                t.len()
            )));
        }
        if let Some(rho) = spearman(d, t) {
            total += rho;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("mastery_recovery"));
    }
    Ok(total / used as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub rmse: f64,
    pub auc: f64,
    pub n_examples: usize,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mastery_recovery: Option<f64>,
}

impl MetricsReport {
    pub fn compute(preds: &[f64], labels: &[bool], seed: u64, config_hash: &str) -> Result<Self> {
        Ok(Self {
            acc: accuracy(preds, labels)?,
            rmse: rmse(preds, labels)?,
            auc: auc(preds, labels)?,
            n_examples: preds.len(),
            seed,
            config_hash: config_hash.to_string(),
            mastery_recovery: None,
        })
    }

    /// One `key=value` line, 4 decimals.
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "acc={:.4} rmse={:.4} auc={:.4} n={} seed={} config={}",
            self.acc, self.rmse, self.auc, self.n_examples, self.seed, self.config_hash
        );
        if let Some(r) = self.mastery_recovery {
            line.push_str(&format!(" mastery_recovery={r:.4}"));
        }
        line
    }

    /// Appends one JSON record per call.
    pub fn append_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(file, "{}", serde_json::to_string(self)?)?;
        Ok(())
    }
}
