use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::data::{Interaction, QMatrix};
use crate::error::{Error, Result};
use crate::feedback::{feedback_loss, pseudo_labels, FeedbackEntry};
use crate::math::{guarded_ln, guarded_ln_grad};
use crate::mixer::{AttentionParams, EmbeddingTable, MixForward, Mixer};
use crate::model::{DiagnosisModel, ModelShape, ScoreBatch};
use crate::params::{Grads, ParamStore};
use crate::sampler::SamplingPlan;
use crate::seeding::{self, domain};

use super::config::{Strategy, TrainConfig};

/// Summed cross-entropy with the log guard.
pub fn loss_inter(preds: &[f64], labels: &[bool]) -> f64 {
    preds.iter().zip(labels).map(|(&y, &r)| cross_entropy(y, r)).sum()
}

fn cross_entropy(y: f64, r: bool) -> f64 {
    if r {
        -guarded_ln(y)
    } else {
        -guarded_ln(1.0 - y)
    }
}

fn cross_entropy_grad(y: f64, r: bool) -> f64 {
    if r {
        -guarded_ln_grad(y)
    } else {
        guarded_ln_grad(1.0 - y)
    }
}

/// Per-student mean cross-entropy against pseudo labels, summed over students.
/// `students[k]` owns sample `k`.
pub fn loss_uninter(students: &[usize], preds: &[f64], labels: &[bool]) -> f64 {
    let counts = per_student_counts(students);
    students
        .iter()
        .zip(preds.iter().zip(labels))
        .map(|(s, (&y, &l))| cross_entropy(y, l) / counts[s] as f64)
        .sum()
}

fn per_student_counts(students: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &s in students {
        *counts.entry(s).or_insert(0) += 1;
    }
    counts
}

/// `inter + uninter + balance * feedback`.
pub fn total_loss(inter: f64, uninter: f64, feedback: f64, balance: f64) -> f64 {
    inter + uninter + balance * feedback
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub inter: f64,
    pub uninter: f64,
    pub feedback: f64,
}

impl LossParts {
    pub fn total(&self, balance: f64) -> f64 {
        total_loss(self.inter, self.uninter, self.feedback, balance)
    }

    pub fn is_finite(&self) -> bool {
        self.inter.is_finite() && self.uninter.is_finite() && self.feedback.is_finite()
    }
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.inter += o.inter;
        self.uninter += o.uninter;
        self.feedback += o.feedback;
    }
}

/// Embedding table, both diagnosis copies and the mixer, in one store.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub strategy: Strategy,
    pub store: ParamStore,
    pub embedding: EmbeddingTable,
    /// The diagnosis copy that is evaluated.
    pub f2: DiagnosisModel,
    /// The ranking-trained copy that labels mixed samples.
    pub f1: Option<DiagnosisModel>,
    pub mixer: Option<Mixer>,
    pub q: QMatrix,
}

impl Assembly {
    /// Initializes in a fixed order (embedding, f2, f1, attention) from the
    /// `INIT` stream, so f2 starts identical under every strategy.
    pub fn new(config: &TrainConfig, num_students: usize, q: &QMatrix) -> Result<Self> {
        let mut rng = seeding::stream(config.seed, &[domain::INIT]);
        let mut store = ParamStore::new();
        let dim = config.dim.unwrap_or(q.num_concepts());
        let embedding = EmbeddingTable::new(&mut store, q.num_exercises(), dim, &mut rng);
        let shape = ModelShape {
            num_students,
            dim,
            num_concepts: q.num_concepts(),
            hidden: config.hidden,
        };
        let f2 = DiagnosisModel::new(&mut store, "f2", config.model, shape, &mut rng)?;
        let f1 = if config.strategy.uses_samples() {
            Some(DiagnosisModel::new(&mut store, "f1", config.model, shape, &mut rng)?)
        } else {
            None
        };
        let mixer = if config.strategy == Strategy::Cmes {
            let attention = AttentionParams::new(&mut store, dim, &mut rng);
            Some(Mixer::new(embedding, attention, q, config.alpha_w, config.beta_w)?)
        } else {
            None
        };
        Ok(Self {
            strategy: config.strategy,
            store,
            embedding,
            f2,
            f1,
            mixer,
            q: q.clone(),
        })
    }

    /// Raw embedding rows and Q rows of the batch's exercises.
    pub fn interacted_batch(&self, batch: &[Interaction]) -> ScoreBatch {
        let exercises: Vec<usize> = batch.iter().map(|it| it.exercise).collect();
        let mut masks = Array2::zeros((batch.len(), self.q.num_concepts()));
        for (mut row, &e) in masks.rows_mut().into_iter().zip(&exercises) {
            for &c in self.q.concepts(e) {
                row[c] = 1.0;
            }
        }
        ScoreBatch {
            students: batch.iter().map(|it| it.student).collect(),
            vectors: self.store.get(self.embedding.id).select(Axis(0), &exercises),
            masks,
        }
    }

    /// f2 probabilities for `interactions`.
    pub fn predict(&self, interactions: &[Interaction]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(interactions.len());
        for chunk in interactions.chunks(4096) {
            out.extend(self.f2.predict(&self.store, &self.interacted_batch(chunk))?);
        }
        Ok(out)
    }

    fn scatter_embedding(&self, grads: &mut Grads, exercises: impl Iterator<Item = usize>, d: ArrayView2<f64>) {
        let table = grads.get_mut(self.embedding.id);
        for (e, row) in exercises.zip(d.rows()) {
            let mut dst = table.slice_mut(s![e, ..]);
            dst += &row;
        }
    }
}

/// One mixed or sampled vector and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub student: usize,
    pub source: usize,
    /// f1 probability.
    pub score: f64,
    pub label: bool,
}

#[derive(Clone, Debug, Default)]
pub struct StepOutput {
    pub losses: LossParts,
    /// f2 probabilities on the batch's answered exercises.
    pub preds: Vec<f64>,
    pub samples: Vec<SampleRecord>,
    pub pairs: usize,
}

impl StepOutput {
    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|r| r.label).collect()
    }
}

/// The samples built for one answered exercise.
struct Segment {
    row: usize,
    start: usize,
    len: usize,
    mixed: Option<MixForward>,
    attached: Vec<usize>,
}

/// Forward pass of the full objective on one batch and, when `grads` is
/// given, the backward pass. Gradients are accumulated, not overwritten.
///
/// `fixed_labels` replaces the pseudo labels f1 would assign; gradient checks
/// use it to hold the labels constant under perturbation.
pub fn batch_step(
    asm: &Assembly,
    batch: &[Interaction],
    plan: Option<&SamplingPlan>,
    balance: f64,
    fixed_labels: Option<&[bool]>,
    mut grads: Option<&mut Grads>,
) -> Result<StepOutput> {
    let store = &asm.store;
    let inter = asm.interacted_batch(batch);
    let responses: Vec<bool> = batch.iter().map(|it| it.correct).collect();
    let c2 = asm.f2.forward(store, &inter)?;
    let mut out = StepOutput {
        losses: LossParts {
            inter: loss_inter(&c2.probs, &responses),
            ..Default::default()
        },
        ..Default::default()
    };
    if let Some(g) = grads.as_deref_mut() {
        let d: Vec<f64> = c2.probs.iter().zip(&responses).map(|(&y, &r)| cross_entropy_grad(y, r)).collect();
        let dv = asm.f2.backward(store, &inter, &c2, &d, g);
        asm.scatter_embedding(g, batch.iter().map(|it| it.exercise), dv.view());
    }
    out.preds = c2.probs;

    let (Some(f1), Some(plan)) = (&asm.f1, plan) else {
        return Ok(out);
    };

    let dim = asm.embedding.dim;
    let c = asm.q.num_concepts();
    let mut segments = Vec::new();
    let mut vectors: Vec<f64> = Vec::new();
    let mut masks: Vec<f64> = Vec::new();
    let mut students = Vec::new();
    for (row, it) in batch.iter().enumerate() {
        let Some(group) = plan.group(it.student, it.exercise) else { continue };
        let start = students.len();
        match &asm.mixer {
            Some(mixer) => {
                let members: Vec<usize> = group.members().collect();
                let fwd = mixer.forward(store, &asm.q, &members)?;
                vectors.extend(fwd.cache.output.iter());
                for _ in 0..members.len() {
                    masks.extend_from_slice(&fwd.mask);
                }
                students.extend(std::iter::repeat_n(it.student, members.len()));
                segments.push(Segment { row, start, len: members.len(), mixed: Some(fwd), attached: Vec::new() });
            }
            None => {
                let table = store.get(asm.embedding.id);
                for &a in &group.attached {
                    vectors.extend(table.row(a).iter());
                    masks.extend(asm.q.dense_row(a));
                }
                students.extend(std::iter::repeat_n(it.student, group.attached.len()));
                segments.push(Segment {
                    row,
                    start,
                    len: group.attached.len(),
                    mixed: None,
                    attached: group.attached.clone(),
                });
            }
        }
    }
    if students.is_empty() {
        return Ok(out);
    }
    let total = students.len();
    let mixed = ScoreBatch {
        students,
        vectors: Array2::from_shape_vec((total, dim), vectors).expect("row-major sample vectors"),
        masks: Array2::from_shape_vec((total, c), masks).expect("row-major sample masks"),
    };
    let c1_mixed = f1.forward(store, &mixed)?;
    let c1_inter = f1.forward(store, &inter)?;
    let labels = match fixed_labels {
        Some(l) if l.len() == total => l.to_vec(),
        Some(l) => {
            return Err(Error::Config(format!("{} fixed labels for {total} samples", l.len())));
        }
        None => pseudo_labels(&c1_mixed.probs),
    };
    let c2_mixed = asm.f2.forward(store, &mixed)?;
    // each sample counts 1/|U_i| where U_i is the student's sample set for the
    // whole epoch, so the batch terms add up to the per-student mean
    let with_source = usize::from(asm.mixer.is_some());
    let weights: Vec<f64> = mixed
        .students
        .iter()
        .map(|&s| 1.0 / plan.sample_count(s, with_source) as f64)
        .collect();
    out.losses.uninter = weights
        .iter()
        .zip(c2_mixed.probs.iter().zip(&labels))
        .map(|(w, (&y, &l))| w * cross_entropy(y, l))
        .sum();

    let entries: Vec<FeedbackEntry> = segments
        .iter()
        .map(|seg| FeedbackEntry {
            student: batch[seg.row].student,
            exercise: batch[seg.row].exercise,
            correct: batch[seg.row].correct,
            score: c1_inter.probs[seg.row],
            mixed_scores: c1_mixed.probs[seg.start..seg.start + seg.len].to_vec(),
        })
        .collect();
    let fb = feedback_loss(&entries);
    out.losses.feedback = fb.value;
    out.pairs = fb.pairs;
    out.samples = segments
        .iter()
        .flat_map(|seg| {
            let source = batch[seg.row].exercise;
            (seg.start..seg.start + seg.len).map(move |k| (k, source))
        })
        .map(|(k, source)| SampleRecord {
            student: mixed.students[k],
            source,
            score: c1_mixed.probs[k],
            label: labels[k],
        })
        .collect();

    let Some(g) = grads else { return Ok(out) };
    let d_uninter: Vec<f64> = weights
        .iter()
        .zip(c2_mixed.probs.iter().zip(&labels))
        .map(|(w, (&y, &l))| w * cross_entropy_grad(y, l))
        .collect();
    let mut d_mixed = asm.f2.backward(store, &mixed, &c2_mixed, &d_uninter, g);
    if balance != 0.0 {
        let mut d_inter_f1 = vec![0.0; batch.len()];
        let mut d_mixed_f1 = vec![0.0; total];
        for (seg, (ds, dm)) in segments.iter().zip(fb.d_score.iter().zip(&fb.d_mixed)) {
            d_inter_f1[seg.row] += balance * ds;
            for (k, v) in dm.iter().enumerate() {
                d_mixed_f1[seg.start + k] = balance * v;
            }
        }
        let dv = f1.backward(store, &inter, &c1_inter, &d_inter_f1, g);
        asm.scatter_embedding(g, batch.iter().map(|it| it.exercise), dv.view());
        d_mixed += &f1.backward(store, &mixed, &c1_mixed, &d_mixed_f1, g);
    }
    for seg in &segments {
        let d = d_mixed.slice(s![seg.start..seg.start + seg.len, ..]);
        match (&asm.mixer, &seg.mixed) {
            (Some(mixer), Some(fwd)) => mixer.backward(store, fwd, d, g),
            _ => asm.scatter_embedding(g, seg.attached.iter().copied(), d),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn inter_unit_values() {
        assert!((loss_inter(&[0.5], &[true]) - LN_2).abs() < 1e-12);
        assert!(loss_inter(&[1.0, 0.0], &[true, false]).abs() < 1e-15);
        let expected = -(0.9f64.ln() + 0.8f64.ln() + 0.3f64.ln());
        assert!((loss_inter(&[0.9, 0.2, 0.7], &[true, false, false]) - expected).abs() < 1e-12);
        assert!((expected - 1.5325).abs() < 5e-5);
    }

    #[test]
    fn inter_guard_keeps_loss_finite() {
        assert!((loss_inter(&[0.0], &[true]) + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn uninter_unit_values() {
        assert!((loss_uninter(&[0, 0], &[0.5, 0.5], &[true, false]) - LN_2).abs() < 1e-12);
        let two = loss_uninter(&[0, 3, 3], &[0.5, 0.5, 0.5], &[true, true, false]);
        assert!((two - 2.0 * LN_2).abs() < 1e-12);
        assert!(loss_uninter(&[1, 1], &[1.0, 0.0], &[true, false]).abs() < 1e-15);
        assert_eq!(loss_uninter(&[], &[], &[]), 0.0);
    }

    #[test]
    fn total_unit_values() {
        assert_eq!(total_loss(1.0, 0.0, 0.5, 1.0), 1.5);
        assert!((total_loss(0.7, 0.3, 0.4, 0.5) - 1.2).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 0.3, 123.0, 0.0), 0.7 + 0.3);
    }
}
