//! Exercise embeddings, concept-weight enhancement and attention mixing.
//!
//! For an answered exercise and its attached candidates, each member's
//! embedding row is scaled elementwise by its concept-weight row (`beta` on
//! its own concepts, `alpha` elsewhere), the rows are stacked, and one
//! scaled dot-product self-attention pass produces as many mixed vectors as
//! there were members.

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::QMatrix;
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Grads, ParamStore, TensorId};

/// Trainable `M x d` exercise embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub id: TensorId,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rows: usize, dim: usize, rng: &mut R) -> Self {
        let id = store.add("embedding", xavier_uniform(rows, dim, rng), false);
        Self { id, rows, dim }
    }

    /// Row `exercise`; the same as multiplying its one-hot vector by the table.
    pub fn embed<'a>(&self, store: &'a ParamStore, exercise: usize) -> Result<ArrayView1<'a, f64>> {
        if exercise >= self.rows {
            return Err(Error::Index {
                what: "exercise",
                index: exercise,
                len: self.rows,
            });
        }
        Ok(store.get(self.id).row(exercise))
    }
}

/// `M x C` matrix holding `beta` where Q is 1 and `alpha` where it is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptWeightMatrix {
    pub alpha: f64,
    pub beta: f64,
    weights: Vec<Vec<f64>>,
}

impl ConceptWeightMatrix {
    pub fn row(&self, exercise: usize) -> &[f64] {
        &self.weights[exercise]
    }

    pub fn num_exercises(&self) -> usize {
        self.weights.len()
    }
}

pub fn concept_weights(q: &QMatrix, alpha: f64, beta: f64) -> Result<ConceptWeightMatrix> {
    if !(alpha > 0.0 && beta > 0.0) || !(alpha < beta) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Validation(format!(
            "concept weights need 0 < alpha < beta, got alpha={alpha}, beta={beta}"
        )));
    }
    let weights = (0..q.num_exercises())
        .map(|e| {
            q.dense_row(e)
                .into_iter()
                .map(|v| if v > 0.0 { beta } else { alpha })
                .collect()
        })
        .collect();
    Ok(ConceptWeightMatrix {
        alpha,
        beta,
        weights,
    })
}

/// Elementwise product; only defined when the embedding has one slot per
/// concept.
pub fn weight_enhance(vector: ArrayView1<f64>, weight_row: &[f64]) -> Result<Array1<f64>> {
    if vector.len() != weight_row.len() {
        return Err(Error::Config(format!(
            "weight enhancement needs embedding size ({}) equal to concept count ({})",
            vector.len(),
            weight_row.len()
        )));
    }
    Ok(vector
        .iter()
        .zip(weight_row)
        .map(|(v, w)| v * w)
        .collect())
}

/// Query, key and value projections, each `d x d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let w_q = store.add("attention.w_q", xavier_uniform(dim, dim, rng), false);
        let w_k = store.add("attention.w_k", xavier_uniform(dim, dim, rng), false);
        let w_v = store.add("attention.w_v", xavier_uniform(dim, dim, rng), false);
        Self { w_q, w_k, w_v }
    }
}

/// Intermediate values of one attention pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    /// Pre-softmax scores `QK^T / sqrt(d)`.
    pub logits: Array2<f64>,
    /// Row-stochastic attention weights.
    pub weights: Array2<f64>,
    pub output: Array2<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `softmax(S W_q (S W_k)^T / sqrt(d)) S W_v` for a `(n+1) x d` stack `S`.
pub fn attention_forward(
    stack: ArrayView2<f64>,
    w_q: &Array2<f64>,
    w_k: &Array2<f64>,
    w_v: &Array2<f64>,
) -> Result<AttentionCache> {
    if stack.nrows() == 0 {
        return Err(Error::Numeric("attention over an empty stack".into()));
    }
    if stack.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in attention input".into()));
    }
    let d = stack.ncols();
    let queries = stack.dot(w_q);
    let keys = stack.dot(w_k);
    let values = stack.dot(w_v);
    let logits = queries.dot(&keys.t()) / (d as f64).sqrt();
    let weights = softmax_rows(&logits);
    let output = weights.dot(&values);
    Ok(AttentionCache {
        queries,
        keys,
        values,
        logits,
        weights,
        output,
    })
}

/// Convenience wrapper returning only the mixed rows.
pub fn attention_mix(
    stack: ArrayView2<f64>,
    store: &ParamStore,
    params: &AttentionParams,
) -> Result<Array2<f64>> {
    Ok(attention_forward(stack, store.get(params.w_q), store.get(params.w_k), store.get(params.w_v))?.output)
}

/// Gradients of an attention pass given `d_output`.
pub struct AttentionGrads {
    pub d_stack: Array2<f64>,
    pub d_w_q: Array2<f64>,
    pub d_w_k: Array2<f64>,
    pub d_w_v: Array2<f64>,
}

pub fn attention_backward(
    stack: ArrayView2<f64>,
    w_q: &Array2<f64>,
    w_k: &Array2<f64>,
    w_v: &Array2<f64>,
    cache: &AttentionCache,
    d_output: ArrayView2<f64>,
) -> AttentionGrads {
    let scale = 1.0 / (stack.ncols() as f64).sqrt();
    let d_weights = d_output.dot(&cache.values.t());
    let d_values = cache.weights.t().dot(&d_output);
    // softmax Jacobian per row: p * (g - <g, p>)
    let mut d_logits = d_weights;
    for (mut g, p) in d_logits.rows_mut().into_iter().zip(cache.weights.rows()) {
        let inner = g.dot(&p);
        g.zip_mut_with(&p, |gi, &pi| *gi = pi * (*gi - inner));
    }
    let d_queries = d_logits.dot(&cache.keys) * scale;
    let d_keys = d_logits.t().dot(&cache.queries) * scale;
    let d_stack = d_queries.dot(&w_q.t()) + d_keys.dot(&w_k.t()) + d_values.dot(&w_v.t());
    AttentionGrads {
        d_w_q: stack.t().dot(&d_queries),
        d_w_k: stack.t().dot(&d_keys),
        d_w_v: stack.t().dot(&d_values),
        d_stack,
    }
}

/// An attention-mixed synthetic exercise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub student: usize,
    pub source: usize,
    /// The candidates mixed into `source`.
    pub constituents: Vec<usize>,
    pub vector: Vec<f64>,
    pub pseudo_label: Option<bool>,
    /// Union of the Q rows of `source` and `constituents`.
    pub concept_mask: Vec<f64>,
}

/// Forward state of one mixed group.
#[derive(Clone, Debug)]
pub struct MixForward {
    pub members: Vec<usize>,
    pub stack: Array2<f64>,
    pub cache: AttentionCache,
    pub mask: Vec<f64>,
}

/// Embedding table, optional concept weights and the shared attention block.
#[derive(Clone, Debug)]
pub struct Mixer {
    pub embedding: EmbeddingTable,
    pub attention: AttentionParams,
    weights: Option<ConceptWeightMatrix>,
}

impl Mixer {
    /// Enhancement is switched off (with a warning) when the embedding size
    /// differs from the concept count.
    pub fn new(
        embedding: EmbeddingTable,
        attention: AttentionParams,
        q: &QMatrix,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let matrix = concept_weights(q, alpha, beta)?;
        let weights = if embedding.dim == q.num_concepts() {
            Some(matrix)
        } else {
            warn!(
                "embedding size {} != concept count {}; concept-weight enhancement disabled",
                embedding.dim,
                q.num_concepts()
            );
            None
        };
        Ok(Self {
            embedding,
            attention,
            weights,
        })
    }

    pub fn enhancement_enabled(&self) -> bool {
        self.weights.is_some()
    }

    fn stack(&self, store: &ParamStore, members: &[usize]) -> Array2<f64> {
        let table = store.get(self.embedding.id);
        let mut stack = Array2::zeros((members.len(), self.embedding.dim));
        for (mut row, &e) in stack.rows_mut().into_iter().zip(members) {
            row.assign(&table.row(e));
            if let Some(w) = &self.weights {
                row.iter_mut().zip(w.row(e)).for_each(|(v, w)| *v *= w);
            }
        }
        stack
    }

    /// Mixes `members` (source first). Returns one output row per member.
    pub fn forward(&self, store: &ParamStore, q: &QMatrix, members: &[usize]) -> Result<MixForward> {
        for &e in members {
            if e >= self.embedding.rows {
                return Err(Error::Index {
                    what: "exercise",
                    index: e,
                    len: self.embedding.rows,
                });
            }
        }
        let stack = self.stack(store, members);
        let cache = attention_forward(
            stack.view(),
            store.get(self.attention.w_q),
            store.get(self.attention.w_k),
            store.get(self.attention.w_v),
        )?;
        let mut mask = vec![0.0; q.num_concepts()];
        for &e in members {
            for &c in q.concepts(e) {
                mask[c] = 1.0;
            }
        }
        Ok(MixForward {
            members: members.to_vec(),
            stack,
            cache,
            mask,
        })
    }

    /// Accumulates gradients for the embedding rows and attention matrices.
    pub fn backward(&self, store: &ParamStore, fwd: &MixForward, d_output: ArrayView2<f64>, grads: &mut Grads) {
        let g = attention_backward(
            fwd.stack.view(),
            store.get(self.attention.w_q),
            store.get(self.attention.w_k),
            store.get(self.attention.w_v),
            &fwd.cache,
            d_output,
        );
        *grads.get_mut(self.attention.w_q) += &g.d_w_q;
        *grads.get_mut(self.attention.w_k) += &g.d_w_k;
        *grads.get_mut(self.attention.w_v) += &g.d_w_v;
        let d_table = grads.get_mut(self.embedding.id);
        for (row, &e) in g.d_stack.rows().into_iter().zip(&fwd.members) {
            let mut target = d_table.slice_mut(s![e, ..]);
            match &self.weights {
                Some(w) => target
                    .iter_mut()
                    .zip(row.iter().zip(w.row(e)))
                    .for_each(|(t, (g, w))| *t += g * w),
                None => target += &row,
            }
        }
    }

    /// Materializes the mixed samples of one group.
    pub fn samples(&self, student: usize, fwd: &MixForward) -> Vec<MixedSample> {
        fwd.cache
            .output
            .axis_iter(Axis(0))
            .map(|row| MixedSample {
                student,
                source: fwd.members[0],
                constituents: fwd.members[1..].to_vec(),
                vector: row.to_vec(),
                pseudo_label: None,
                concept_mask: fwd.mask.clone(),
            })
            .collect()
    }
}
