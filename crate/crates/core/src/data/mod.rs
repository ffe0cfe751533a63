//! Response logs, Q-matrices and student profiles.
//!
//! A [`Dataset`] is the immutable container everything else reads from:
//! students, exercises and concepts are dense indices, the response log is a
//! set of [`Interaction`]s and the exercise-to-concept incidence lives in a
//! sparse [`QMatrix`].

mod io;
mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_dataset, load_interactions, load_q_matrix, write_dataset, write_interactions,
    write_q_matrix, IdMap, LoadedDataset, LoadedInteractions,
};
pub use split::{filter_min_logs, split_per_student, subsample_per_student, DataSplit, Filtered, SplitRatios};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticGroundTruth};

/// One response record: student `student` answered exercise `exercise`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub student: usize,
    pub exercise: usize,
    pub correct: bool,
}

impl Interaction {
    pub fn new(student: usize, exercise: usize, correct: bool) -> Self {
        Self {
            student,
            exercise,
            correct,
        }
    }

    /// The response as a 0/1 target.
    #[inline]
    pub fn label(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Binary exercise-by-concept incidence, stored as sorted concept lists per
/// exercise. Every exercise references at least one concept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrix {
    num_concepts: usize,
    rows: Vec<Vec<usize>>,
}

impl QMatrix {
    pub fn from_pairs<I>(num_exercises: usize, num_concepts: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut rows = vec![Vec::new(); num_exercises];
        for (e, c) in pairs {
            if e >= num_exercises {
                return Err(Error::Index {
                    what: "exercise",
                    index: e,
                    len: num_exercises,
                });
            }
            if c >= num_concepts {
                return Err(Error::Index {
                    what: "concept",
                    index: c,
                    len: num_concepts,
                });
            }
            rows[e].push(c);
        }
        Self::from_rows(num_concepts, rows)
    }

    pub fn from_rows(num_concepts: usize, mut rows: Vec<Vec<usize>>) -> Result<Self> {
        for (e, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                return Err(Error::Validation(format!(
                    "exercise {e} has no concept in the Q-matrix"
                )));
            }
            if let Some(&c) = row.last() {
                if c >= num_concepts {
                    return Err(Error::Index {
                        what: "concept",
                        index: c,
                        len: num_concepts,
                    });
                }
            }
        }
        Ok(Self { num_concepts, rows })
    }

    pub fn num_exercises(&self) -> usize {
        self.rows.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    /// Sorted concept ids of exercise `e`.
    pub fn concepts(&self, e: usize) -> &[usize] {
        &self.rows[e]
    }

    pub fn contains(&self, e: usize, c: usize) -> bool {
        self.rows[e].binary_search(&c).is_ok()
    }

    /// Row `e` as a dense 0/1 vector of length C.
    pub fn dense_row(&self, e: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_concepts];
        for &c in &self.rows[e] {
            out[c] = 1.0;
        }
        out
    }

    /// All `(exercise, concept)` pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(e, row)| row.iter().map(move |&c| (e, c)))
    }
}

/// Students, exercises, concepts, the response log and the Q-matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_students: usize,
    pub num_exercises: usize,
    pub num_concepts: usize,
    pub interactions: Vec<Interaction>,
    pub q_matrix: QMatrix,
}

impl Dataset {
    /// Validates the index ranges and rejects repeated (student, exercise)
    /// pairs.
    pub fn new(num_students: usize, interactions: Vec<Interaction>, q_matrix: QMatrix) -> Result<Self> {
        let num_exercises = q_matrix.num_exercises();
        let num_concepts = q_matrix.num_concepts();
        let mut seen = HashSet::with_capacity(interactions.len());
        for it in &interactions {
            if it.student >= num_students {
                return Err(Error::Index {
                    what: "student",
                    index: it.student,
                    len: num_students,
                });
            }
            if it.exercise >= num_exercises {
                return Err(Error::Index {
                    what: "exercise",
                    index: it.exercise,
                    len: num_exercises,
                });
            }
            if !seen.insert((it.student, it.exercise)) {
                return Err(Error::Validation(format!(
                    "duplicate response for student {} on exercise {}",
                    it.student, it.exercise
                )));
            }
        }
        Ok(Self {
            num_students,
            num_exercises,
            num_concepts,
            interactions,
            q_matrix,
        })
    }

    /// Drops students with fewer than `min_logs` responses and re-indexes the
    /// survivors densely. Exercise and concept indices are untouched.
    pub fn filter_min_logs(&self, min_logs: usize) -> Dataset {
        let filtered = filter_min_logs(&self.interactions, min_logs);
        Dataset {
            num_students: filtered.kept_students.len(),
            num_exercises: self.num_exercises,
            num_concepts: self.num_concepts,
            interactions: filtered.interactions,
            q_matrix: self.q_matrix.clone(),
        }
    }

    /// SHA-256 over the sizes, the response log in stored order and the
    /// Q-matrix, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for n in [self.num_students, self.num_exercises, self.num_concepts] {
            h.update((n as u64).to_le_bytes());
        }
        for it in &self.interactions {
            h.update((it.student as u64).to_le_bytes());
            h.update((it.exercise as u64).to_le_bytes());
            h.update([u8::from(it.correct)]);
        }
        for (e, c) in self.q_matrix.pairs() {
            h.update((e as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn positive_rate(&self) -> f64 {
        if self.interactions.is_empty() {
            return 0.0;
        }
        let pos = self.interactions.iter().filter(|it| it.correct).count();
        pos as f64 / self.interactions.len() as f64
    }
}

/// What a student has done in the training split: the interacted exercise set
/// and the union of their concepts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentProfile {
    pub student: usize,
    /// Sorted, distinct.
    pub exercises: Vec<usize>,
    /// Sorted, distinct; the union of the Q rows of `exercises`.
    pub concepts: Vec<usize>,
}

impl StudentProfile {
    /// Number of interacted exercises.
    pub fn len(&self) -> usize {
        self.exercises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exercises.is_empty()
    }

    pub fn has_exercise(&self, e: usize) -> bool {
        self.exercises.binary_search(&e).is_ok()
    }

    pub fn has_concept(&self, c: usize) -> bool {
        self.concepts.binary_search(&c).is_ok()
    }

    /// True when exercise `e` shares a concept with this profile.
    pub fn touches(&self, q: &QMatrix, e: usize) -> bool {
        q.concepts(e).iter().any(|&c| self.has_concept(c))
    }
}

/// Profiles for every student that appears in `train`. Must only ever be fed
/// the training split.
pub fn build_profiles(train: &[Interaction], q: &QMatrix) -> BTreeMap<usize, StudentProfile> {
    let mut exercises: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for it in train {
        exercises.entry(it.student).or_default().insert(it.exercise);
    }
    exercises
        .into_iter()
        .map(|(student, set)| {
            let mut concepts: BTreeSet<usize> = BTreeSet::new();
            for &e in &set {
                concepts.extend(q.concepts(e).iter().copied());
            }
            let profile = StudentProfile {
                student,
                exercises: set.into_iter().collect(),
                concepts: concepts.into_iter().collect(),
            };
            (student, profile)
        })
        .collect()
}
