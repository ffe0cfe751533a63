//! Diagnosis functions: IRT, MIRT and NCD.
//!
//! Every model scores a batch of `(student, exercise vector, concept mask)`
//! rows. The exercise vector is either an embedding row (answered exercise)
//! or an attention-mixed vector; exercise-level quantities such as difficulty
//! and discrimination are projected from it, so mixed samples need no
//! parameters of their own.
//!
//! - IRT: `sigma(a * (theta - b))`, `b = w_b . v + c_b`, `a = softplus(w_a . v)`
//! - MIRT: `sigma(theta . v - b)`, `b = w_b . v + c_b`
//! - NCD: `x = mask * (sigma(theta) - sigma(v)) * sigma(w_d . v + c_d)`, then two
//!   sigmoid layers and a sigmoid output, all with non-negative weights.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::QMatrix;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::mixer::{EmbeddingTable, MixedSample};
use crate::params::{xavier_uniform, Grads, ParamStore, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Irt,
    Mirt,
    Ncd,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Irt => "irt",
            ModelKind::Mirt => "mirt",
            ModelKind::Ncd => "ncd",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "irt" => Ok(ModelKind::Irt),
            "mirt" => Ok(ModelKind::Mirt),
            "ncd" => Ok(ModelKind::Ncd),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_students: usize,
    /// Exercise vector length `d`.
    pub dim: usize,
    pub num_concepts: usize,
    /// NCD hidden layer widths.
    pub hidden: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Head {
    Irt {
        w_b: TensorId,
        c_b: TensorId,
        w_a: TensorId,
    },
    Mirt {
        w_b: TensorId,
        c_b: TensorId,
    },
    Ncd {
        w_d: TensorId,
        c_d: TensorId,
        w1: TensorId,
        b1: TensorId,
        w2: TensorId,
        b2: TensorId,
        w3: TensorId,
        b3: TensorId,
    },
}

/// One diagnosis function with its own parameters in a shared store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagnosisModel {
    pub kind: ModelKind,
    pub shape: ModelShape,
    pub prefix: String,
    pub theta: TensorId,
    head: Head,
}

/// A batch of rows to score.
#[derive(Clone, Debug)]
pub struct ScoreBatch {
    pub students: Vec<usize>,
    /// `B x d`.
    pub vectors: Array2<f64>,
    /// `B x C`; only read by NCD.
    pub masks: Array2<f64>,
}

impl ScoreBatch {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }
}

/// Forward intermediates.
#[derive(Clone, Debug)]
pub struct ModelCache {
    pub probs: Vec<f64>,
    inner: CacheInner,
}

#[derive(Clone, Debug)]
enum CacheInner {
    Irt {
        za: Array1<f64>,
        a: Array1<f64>,
        u: Array1<f64>,
    },
    Mirt,
    Ncd {
        sig_theta: Array2<f64>,
        sig_v: Array2<f64>,
        disc: Array1<f64>,
        x: Array2<f64>,
        h1: Array2<f64>,
        h2: Array2<f64>,
    },
}

fn gather_rows(table: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    table.select(Axis(0), rows)
}

fn scatter_add(target: &mut Array2<f64>, rows: &[usize], values: ArrayView2<f64>) {
    for (&r, v) in rows.iter().zip(values.rows()) {
        let mut dst = target.slice_mut(s![r, ..]);
        dst += &v;
    }
}

impl DiagnosisModel {
    /// Registers the parameters under `prefix` (e.g. `f1`) and initializes
    /// them: Xavier-uniform weights, zero biases, constrained weights clamped.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        kind: ModelKind,
        shape: ModelShape,
        rng: &mut R,
    ) -> Result<Self> {
        let ModelShape {
            num_students,
            dim,
            num_concepts,
            hidden: (h1, h2),
        } = shape;
        if dim == 0 || num_students == 0 {
            return Err(Error::Config("model needs at least one student and d >= 1".into()));
        }
        let name = |n: &str| format!("{prefix}.{n}");
        let theta_cols = match kind {
            ModelKind::Irt => 1,
            ModelKind::Mirt => dim,
            ModelKind::Ncd => {
                if dim != num_concepts {
                    return Err(Error::Config(format!(
                        "NCD needs embedding size equal to concept count ({dim} != {num_concepts})"
                    )));
                }
                if h1 == 0 || h2 == 0 {
                    return Err(Error::Config("NCD hidden layers must be non-empty".into()));
                }
                num_concepts
            }
        };
        let theta = store.add(name("theta"), xavier_uniform(num_students, theta_cols, rng), false);
        let head = match kind {
            ModelKind::Irt => Head::Irt {
                w_b: store.add(name("w_b"), xavier_uniform(dim, 1, rng), false),
                c_b: store.add(name("c_b"), Array2::zeros((1, 1)), false),
                w_a: store.add(name("w_a"), xavier_uniform(dim, 1, rng), false),
            },
            ModelKind::Mirt => Head::Mirt {
                w_b: store.add(name("w_b"), xavier_uniform(dim, 1, rng), false),
                c_b: store.add(name("c_b"), Array2::zeros((1, 1)), false),
            },
            ModelKind::Ncd => Head::Ncd {
                w_d: store.add(name("w_d"), xavier_uniform(dim, 1, rng), false),
                c_d: store.add(name("c_d"), Array2::zeros((1, 1)), false),
                w1: store.add(name("w1"), xavier_uniform(h1, num_concepts, rng).mapv(|v| v.max(0.0)), true),
                b1: store.add(name("b1"), Array2::zeros((1, h1)), false),
                w2: store.add(name("w2"), xavier_uniform(h2, h1, rng).mapv(|v| v.max(0.0)), true),
                b2: store.add(name("b2"), Array2::zeros((1, h2)), false),
                w3: store.add(name("w3"), xavier_uniform(1, h2, rng).mapv(|v| v.max(0.0)), true),
                b3: store.add(name("b3"), Array2::zeros((1, 1)), false),
            },
        };
        Ok(Self {
            kind,
            shape,
            prefix: prefix.to_string(),
            theta,
            head,
        })
    }

    /// Every tensor owned by this model.
    pub fn tensors(&self) -> Vec<TensorId> {
        let mut ids = vec![self.theta];
        match self.head {
            Head::Irt { w_b, c_b, w_a } => ids.extend([w_b, c_b, w_a]),
            Head::Mirt { w_b, c_b } => ids.extend([w_b, c_b]),
            Head::Ncd {
                w_d,
                c_d,
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => ids.extend([w_d, c_d, w1, b1, w2, b2, w3, b3]),
        }
        ids
    }

    /// Tensors that must stay elementwise non-negative.
    pub fn constrained(&self) -> Vec<TensorId> {
        match self.head {
            Head::Ncd { w1, w2, w3, .. } => vec![w1, w2, w3],
            _ => Vec::new(),
        }
    }

    /// Projects the constrained tensors of this model onto `>= 0`.
    pub fn clamp_nonnegative(&self, store: &mut ParamStore) {
        for id in self.constrained() {
            store.get_mut(id).mapv_inplace(|v| v.max(0.0));
        }
    }

    fn check(&self, batch: &ScoreBatch) -> Result<()> {
        if batch.vectors.nrows() != batch.len() || batch.vectors.ncols() != self.shape.dim {
            return Err(Error::Config(format!(
                "score batch vectors have shape {:?}, expected ({}, {})",
                batch.vectors.dim(),
                batch.len(),
                self.shape.dim
            )));
        }
        if self.kind == ModelKind::Ncd && batch.masks.dim() != (batch.len(), self.shape.num_concepts) {
            return Err(Error::Config("score batch masks have the wrong shape".into()));
        }
        if let Some(&s) = batch.students.iter().find(|&&s| s >= self.shape.num_students) {
            return Err(Error::Index {
                what: "student",
                index: s,
                len: self.shape.num_students,
            });
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, batch: &ScoreBatch) -> Result<ModelCache> {
        self.check(batch)?;
        let v = &batch.vectors;
        let theta = gather_rows(store.get(self.theta), &batch.students);
        let (logits, inner) = match self.head {
            Head::Irt { w_b, c_b, w_a } => {
                let b = v.dot(store.get(w_b)).column(0).to_owned() + store.get(c_b)[[0, 0]];
                let za = v.dot(store.get(w_a)).column(0).to_owned();
                let a = za.mapv(softplus);
                let u = &theta.column(0) - &b;
                (&a * &u, CacheInner::Irt { za, a, u })
            }
            Head::Mirt { w_b, c_b } => {
                let b = v.dot(store.get(w_b)).column(0).to_owned() + store.get(c_b)[[0, 0]];
                let dotp = (&theta * v).sum_axis(Axis(1));
                (dotp - b, CacheInner::Mirt)
            }
            Head::Ncd {
                w_d,
                c_d,
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => {
                let sig_theta = theta.mapv(sigmoid);
                let sig_v = v.mapv(sigmoid);
                let disc = (v.dot(store.get(w_d)).column(0).to_owned() + store.get(c_d)[[0, 0]]).mapv(sigmoid);
                let mut x = (&sig_theta - &sig_v) * &batch.masks;
                for (mut row, &d) in x.rows_mut().into_iter().zip(disc.iter()) {
                    row *= d;
                }
                let h1 = (x.dot(&store.get(w1).t()) + store.get(b1)).mapv(sigmoid);
                let h2 = (h1.dot(&store.get(w2).t()) + store.get(b2)).mapv(sigmoid);
                let z3 = h2.dot(&store.get(w3).t()).column(0).to_owned() + store.get(b3)[[0, 0]];
                (
                    z3,
                    CacheInner::Ncd {
                        sig_theta,
                        sig_v,
                        disc,
                        x,
                        h1,
                        h2,
                    },
                )
            }
        };
        Ok(ModelCache {
            probs: logits.iter().map(|&z| sigmoid(z)).collect(),
            inner,
        })
    }

    /// Back-propagates `d_probs` (dL/dy per row); accumulates parameter
    /// gradients and returns dL/d(vectors).
    pub fn backward(
        &self,
        store: &ParamStore,
        batch: &ScoreBatch,
        cache: &ModelCache,
        d_probs: &[f64],
        grads: &mut Grads,
    ) -> Array2<f64> {
        let v = &batch.vectors;
        let d_logit: Array1<f64> = cache
            .probs
            .iter()
            .zip(d_probs)
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect();
        match (&self.head, &cache.inner) {
            (&Head::Irt { w_b, c_b, w_a }, CacheInner::Irt { za, a, u }) => {
                let d_a = &d_logit * u;
                let d_u = &d_logit * a;
                let d_theta = d_u.clone().insert_axis(Axis(1));
                scatter_add(grads.get_mut(self.theta), &batch.students, d_theta.view());
                let d_b = -&d_u;
                let d_za = &d_a * &za.mapv(sigmoid);
                *grads.get_mut(w_b) += &v.t().dot(&d_b).insert_axis(Axis(1));
                grads.get_mut(c_b)[[0, 0]] += d_b.sum();
                *grads.get_mut(w_a) += &v.t().dot(&d_za).insert_axis(Axis(1));
                let wb = store.get(w_b).column(0).to_owned();
                let wa = store.get(w_a).column(0).to_owned();
                outer(&d_b, &wb) + outer(&d_za, &wa)
            }
            (&Head::Mirt { w_b, c_b }, CacheInner::Mirt) => {
                let theta = gather_rows(store.get(self.theta), &batch.students);
                let d_theta = v * &d_logit.clone().insert_axis(Axis(1));
                scatter_add(grads.get_mut(self.theta), &batch.students, d_theta.view());
                let d_b = -&d_logit;
                *grads.get_mut(w_b) += &v.t().dot(&d_b).insert_axis(Axis(1));
                grads.get_mut(c_b)[[0, 0]] += d_b.sum();
                let wb = store.get(w_b).column(0).to_owned();
                theta * &d_logit.insert_axis(Axis(1)) + outer(&d_b, &wb)
            }
            (
                &Head::Ncd {
                    w_d,
                    c_d,
                    w1,
                    b1,
                    w2,
                    b2,
                    w3,
                    b3,
                },
                CacheInner::Ncd {
                    sig_theta,
                    sig_v,
                    disc,
                    x,
                    h1,
                    h2,
                },
            ) => {
                let d_z3 = d_logit.insert_axis(Axis(1));
                *grads.get_mut(w3) += &d_z3.t().dot(h2);
                grads.get_mut(b3)[[0, 0]] += d_z3.sum();
                let d_h2 = d_z3.dot(store.get(w3));
                let d_z2 = d_h2 * h2.mapv(|h| h * (1.0 - h));
                *grads.get_mut(w2) += &d_z2.t().dot(h1);
                *grads.get_mut(b2) += &d_z2.sum_axis(Axis(0)).insert_axis(Axis(0));
                let d_h1 = d_z2.dot(store.get(w2));
                let d_z1 = d_h1 * h1.mapv(|h| h * (1.0 - h));
                *grads.get_mut(w1) += &d_z1.t().dot(x);
                *grads.get_mut(b1) += &d_z1.sum_axis(Axis(0)).insert_axis(Axis(0));
                // x = mask * (st - sv) * disc
                let g = d_z1.dot(store.get(w1)) * &batch.masks;
                let diff = sig_theta - sig_v;
                let d_disc = (&g * &diff).sum_axis(Axis(1));
                let g_scaled = &g * &disc.clone().insert_axis(Axis(1));
                let d_theta = &g_scaled * &sig_theta.mapv(|s| s * (1.0 - s));
                scatter_add(grads.get_mut(self.theta), &batch.students, d_theta.view());
                let d_zd = &d_disc * &disc.mapv(|d| d * (1.0 - d));
                *grads.get_mut(w_d) += &v.t().dot(&d_zd).insert_axis(Axis(1));
                grads.get_mut(c_d)[[0, 0]] += d_zd.sum();
                let wd = store.get(w_d).column(0).to_owned();
                -(&g_scaled * &sig_v.mapv(|s| s * (1.0 - s))) + outer(&d_zd, &wd)
            }
            _ => unreachable!("cache does not belong to this model"),
        }
    }

    /// Convenience: probabilities only.
    pub fn predict(&self, store: &ParamStore, batch: &ScoreBatch) -> Result<Vec<f64>> {
        Ok(self.forward(store, batch)?.probs)
    }

    /// Scores an answered exercise from its raw embedding row and Q row.
    pub fn predict_interacted(
        &self,
        store: &ParamStore,
        table: &EmbeddingTable,
        q: &QMatrix,
        student: usize,
        exercise: usize,
    ) -> Result<f64> {
        let row = table.embed(store, exercise)?;
        let batch = ScoreBatch {
            students: vec![student],
            vectors: row.to_owned().insert_axis(Axis(0)),
            masks: Array1::from(q.dense_row(exercise)).insert_axis(Axis(0)),
        };
        Ok(self.predict(store, &batch)?[0])
    }

    /// Scores a mixed sample from its vector and concept mask.
    pub fn predict_mixed(&self, store: &ParamStore, sample: &MixedSample) -> Result<f64> {
        if sample.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite mixed sample vector".into()));
        }
        let batch = ScoreBatch {
            students: vec![sample.student],
            vectors: Array1::from(sample.vector.clone()).insert_axis(Axis(0)),
            masks: Array1::from(sample.concept_mask.clone()).insert_axis(Axis(0)),
        };
        Ok(self.predict(store, &batch)?[0])
    }

    /// Per-student proficiency: `sigma(theta)` rows for MIRT/NCD, the raw
    /// scalar ability for IRT.
    pub fn mastery(&self, store: &ParamStore) -> Array2<f64> {
        let theta = store.get(self.theta);
        match self.kind {
            ModelKind::Irt => theta.clone(),
            ModelKind::Mirt | ModelKind::Ncd => theta.mapv(sigmoid),
        }
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn shape(n: usize, d: usize) -> ModelShape {
        ModelShape {
            num_students: n,
            dim: d,
            num_concepts: d,
            hidden: (6, 4),
        }
    }

    fn random_batch(rng: &mut impl Rng, n: usize, d: usize, b: usize) -> ScoreBatch {
        ScoreBatch {
            students: (0..b).map(|_| rng.random_range(0..n)).collect(),
            vectors: Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0)),
            masks: Array2::from_shape_simple_fn((b, d), || f64::from(u8::from(rng.random_bool(0.5)))),
        }
    }

    #[test]
    fn irt_symmetry_point() {
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(0, &[]);
        let m = DiagnosisModel::new(&mut store, "f", ModelKind::Irt, shape(2, 3), &mut rng).unwrap();
        let Head::Irt { w_b, c_b, .. } = m.head else { unreachable!() };
        let v = Array2::from_shape_vec((1, 3), vec![0.3, -0.2, 0.5]).unwrap();
        let b = v.dot(store.get(w_b))[[0, 0]] + store.get(c_b)[[0, 0]];
        store.get_mut(m.theta)[[1, 0]] = b;
        let p = m
            .predict(&store, &ScoreBatch { students: vec![1], vectors: v, masks: Array2::zeros((1, 3)) })
            .unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mirt_zero_vector() {
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(0, &[]);
        let m = DiagnosisModel::new(&mut store, "f", ModelKind::Mirt, shape(2, 3), &mut rng).unwrap();
        let p = m
            .predict(
                &store,
                &ScoreBatch { students: vec![0], vectors: Array2::zeros((1, 3)), masks: Array2::zeros((1, 3)) },
            )
            .unwrap();
        assert_eq!(p[0], 0.5);
    }

    #[test]
    fn ncd_requires_concept_aligned_embedding() {
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(0, &[]);
        let bad = ModelShape { num_concepts: 4, ..shape(2, 3) };
        assert!(matches!(
            DiagnosisModel::new(&mut store, "f", ModelKind::Ncd, bad, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn out_of_range_student_is_index_error() {
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(0, &[]);
        let m = DiagnosisModel::new(&mut store, "f", ModelKind::Mirt, shape(2, 3), &mut rng).unwrap();
        let batch = ScoreBatch { students: vec![2], vectors: Array2::zeros((1, 3)), masks: Array2::zeros((1, 3)) };
        assert!(matches!(m.predict(&store, &batch), Err(Error::Index { .. })));
    }

    #[test]
    fn ncd_monotone_in_proficiency() {
        let mut rng = seeding::stream(5, &[]);
        for draw in 0..100 {
            let mut store = ParamStore::new();
            let m = DiagnosisModel::new(&mut store, "f", ModelKind::Ncd, shape(1, 5), &mut rng).unwrap();
            let mut batch = random_batch(&mut rng, 1, 5, 1);
            batch.masks.fill(1.0);
            let k = rng.random_range(0..5);
            let base = m.predict(&store, &batch).unwrap()[0];
            // raise sigma(theta_k) by 0.1 via the logit
            let t = store.get(m.theta)[[0, k]];
            let s = (sigmoid(t) + 0.1).min(1.0 - 1e-9);
            store.get_mut(m.theta)[[0, k]] = (s / (1.0 - s)).ln();
            let raised = m.predict(&store, &batch).unwrap()[0];
            assert!(raised >= base, "draw {draw}: {raised} < {base}");
        }
    }

    #[test]
    fn predictions_stay_in_open_interval() {
        let mut rng = seeding::stream(9, &[]);
        for kind in [ModelKind::Irt, ModelKind::Mirt, ModelKind::Ncd] {
            let mut store = ParamStore::new();
            let m = DiagnosisModel::new(&mut store, "f", kind, shape(10, 4), &mut rng).unwrap();
            let batch = random_batch(&mut rng, 10, 4, 1000);
            for p in m.predict(&store, &batch).unwrap() {
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn clamp_projects_constrained_weights() {
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(1, &[]);
        let m = DiagnosisModel::new(&mut store, "f", ModelKind::Ncd, shape(2, 3), &mut rng).unwrap();
        let w1 = m.constrained()[0];
        store.get_mut(w1)[[0, 0]] = -0.1;
        store.get_mut(w1)[[0, 1]] = 0.2;
        let untouched = store.get(m.theta).clone();
        store.get_mut(m.theta)[[0, 0]] = -5.0;
        m.clamp_nonnegative(&mut store);
        assert_eq!(store.get(w1)[[0, 0]], 0.0);
        assert_eq!(store.get(w1)[[0, 1]], 0.2);
        assert_eq!(store.get(m.theta)[[0, 0]], -5.0);
        assert_ne!(untouched[[0, 0]], -5.0);
        let before = store.clone();
        m.clamp_nonnegative(&mut store);
        assert_eq!(before, store);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeding::stream(17, &[]);
        for kind in [ModelKind::Irt, ModelKind::Mirt, ModelKind::Ncd] {
            let mut store = ParamStore::new();
            let m = DiagnosisModel::new(&mut store, "f", kind, shape(4, 3), &mut rng).unwrap();
            // push constrained weights off the boundary so central differences apply
            for id in m.constrained() {
                store.get_mut(id).mapv_inplace(|v| v + 0.05);
            }
            let batch = random_batch(&mut rng, 4, 3, 7);
            let coef: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |st: &ParamStore, b: &ScoreBatch| -> f64 {
                m.predict(st, b).unwrap().iter().zip(&coef).map(|(p, c)| p * c).sum()
            };
            let cache = m.forward(&store, &batch).unwrap();
            let mut grads = store.zero_grads();
            let d_v = m.backward(&store, &batch, &cache, &coef, &mut grads);
            let eps = 1e-6;
            for id in m.tensors() {
                let len = store.get(id).len();
                for i in 0..len {
                    let cols = store.get(id).ncols();
                    let idx = [i / cols, i % cols];
                    let orig = store.get(id)[idx];
                    store.get_mut(id)[idx] = orig + eps;
                    let up = loss(&store, &batch);
                    store.get_mut(id)[idx] = orig - eps;
                    let down = loss(&store, &batch);
                    store.get_mut(id)[idx] = orig;
                    let numeric = (up - down) / (2.0 * eps);
                    let analytic = grads.get(id)[idx];
                    assert!((numeric - analytic).abs() < 1e-8, "{kind} {} {idx:?}: {numeric} vs {analytic}", store.name(id));
                }
            }
            for r in 0..7 {
                for c in 0..3 {
                    let mut b = batch.clone();
                    b.vectors[[r, c]] += eps;
                    let up = loss(&store, &b);
                    b.vectors[[r, c]] -= 2.0 * eps;
                    let down = loss(&store, &b);
                    let numeric = (up - down) / (2.0 * eps);
                    assert!((numeric - d_v[[r, c]]).abs() < 1e-8, "{kind} dV[{r},{c}]");
                }
            }
        }
    }

    #[test]
    fn mirt_with_one_dim_matches_irt_form() {
        // sigma(theta * v - b) is sigma(a (theta - b')) with a = v, b' = b / v
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(2, &[]);
        let m = DiagnosisModel::new(&mut store, "f", ModelKind::Mirt, shape(1, 1), &mut rng).unwrap();
        let Head::Mirt { w_b, c_b } = m.head else { unreachable!() };
        let v = 0.7;
        let theta = store.get(m.theta)[[0, 0]];
        let b = v * store.get(w_b)[[0, 0]] + store.get(c_b)[[0, 0]];
        let p = m
            .predict(&store, &ScoreBatch { students: vec![0], vectors: Array2::from_elem((1, 1), v), masks: Array2::zeros((1, 1)) })
            .unwrap()[0];
        assert!((p - sigmoid(v * (theta - b / v))).abs() < 1e-14);
    }

    #[test]
    fn parse_kind() {
        assert_eq!("NCD".parse::<ModelKind>().unwrap(), ModelKind::Ncd);
        assert!("cdgk".parse::<ModelKind>().is_err());
    }
}
