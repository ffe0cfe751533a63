//! Pairwise ranking loss on the feedback model's scores and the mapping of
//! those scores to hard pseudo labels.
//!
//! For an answered exercise with score `y` and response `r`, each mixed sample
//! with score `y_m` contributes `-ln sigma(y - y_m)` when `r = 1` and
//! `-ln sigma(y_m - y)` when `r = 0`.

use log::debug;

use crate::math::{log_sigmoid, sigmoid};

pub const PSEUDO_LABEL_THRESHOLD: f64 = 0.5;

/// One answered exercise and the scores of its mixed samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackEntry {
    pub student: usize,
    pub exercise: usize,
    pub correct: bool,
    pub score: f64,
    pub mixed_scores: Vec<f64>,
}

/// Loss value with gradients per entry: `d_score[i]` and `d_mixed[i][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackLoss {
    pub value: f64,
    pub pairs: usize,
    pub d_score: Vec<f64>,
    pub d_mixed: Vec<Vec<f64>>,
}

/// Signed score gap so that the loss is always `-ln sigma(gap)`.
fn gap(correct: bool, score: f64, mixed: f64) -> f64 {
    if correct {
        score - mixed
    } else {
        mixed - score
    }
}

/// Loss of a single pair.
pub fn pair_loss(correct: bool, score: f64, mixed: f64) -> f64 {
    -log_sigmoid(gap(correct, score, mixed))
}

pub fn feedback_loss(entries: &[FeedbackEntry]) -> FeedbackLoss {
    let mut out = FeedbackLoss {
        value: 0.0,
        pairs: 0,
        d_score: Vec::with_capacity(entries.len()),
        d_mixed: Vec::with_capacity(entries.len()),
    };
    if entries.is_empty() {
        debug!("feedback loss over an empty batch");
    }
    for e in entries {
        let mut d_score = 0.0;
        let mut d_mixed = Vec::with_capacity(e.mixed_scores.len());
        for &m in &e.mixed_scores {
            let g = gap(e.correct, e.score, m);
            out.value -= log_sigmoid(g);
            // d/dg of -ln sigma(g) is sigma(g) - 1
            let dg = sigmoid(g) - 1.0;
            let sign = if e.correct { 1.0 } else { -1.0 };
            d_score += sign * dg;
            d_mixed.push(-sign * dg);
        }
        out.pairs += e.mixed_scores.len();
        out.d_score.push(d_score);
        out.d_mixed.push(d_mixed);
    }
    out
}

/// `true` when the score is at or above the threshold.
pub fn pseudo_label(score: f64) -> bool {
    score >= PSEUDO_LABEL_THRESHOLD
}

pub fn pseudo_labels(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| pseudo_label(s)).collect()
}
