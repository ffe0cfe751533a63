//! Seeded synthetic populations with known mastery.
//!
//! Each student gets a uniform mastery level per concept, each exercise a
//! difficulty, a discrimination and 1..=3 concepts. A response is correct with
//! probability `sigmoid(disc * (mean mastery over the exercise's concepts -
//! difficulty) / noise)`.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Interaction, QMatrix};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::seeding::{self, domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_students: usize,
    pub num_exercises: usize,
    pub num_concepts: usize,
    pub logs_per_student: usize,
    /// Inclusive range for the number of concepts per exercise.
    pub concepts_per_exercise: (usize, usize),
    /// Temperature of the response link; smaller is less noisy.
    pub noise: f64,
    /// Inclusive range for discriminations.
    pub discrimination: (f64, f64),
    /// Forces every mastery entry to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_mastery: Option<f64>,
    /// Forces every difficulty to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_difficulty: Option<f64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_students: 1000,
            num_exercises: 300,
            num_concepts: 20,
            logs_per_student: 40,
            concepts_per_exercise: (1, 3),
            noise: 0.1,
            discrimination: (0.5, 2.0),
            fixed_mastery: None,
            fixed_difficulty: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.num_students == 0 || self.num_exercises == 0 || self.num_concepts == 0 {
            return fail(format!(
                "students, exercises and concepts must all be >= 1 (got {}, {}, {})",
                self.num_students, self.num_exercises, self.num_concepts
            ));
        }
        if self.logs_per_student == 0 || self.logs_per_student > self.num_exercises {
            return fail(format!(
                "logs per student must lie in 1..={} (got {})",
                self.num_exercises, self.logs_per_student
            ));
        }
        let (lo, hi) = self.concepts_per_exercise;
        if lo == 0 || lo > hi || hi > self.num_concepts {
            return fail(format!(
                "concepts per exercise range {lo}..={hi} invalid for {} concepts",
                self.num_concepts
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return fail(format!("noise temperature must be positive, got {}", self.noise));
        }
        let (dlo, dhi) = self.discrimination;
        if !(dlo > 0.0 && dlo <= dhi && dhi.is_finite()) {
            return fail(format!("discrimination range {dlo}..={dhi} must be positive"));
        }
        for (name, v) in [("mastery", self.fixed_mastery), ("difficulty", self.fixed_difficulty)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return fail(format!("fixed {name} {v} outside [0,1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    /// `N x C`, entries in [0,1].
    pub mastery: Vec<Vec<f64>>,
    /// Length M, entries in [0,1].
    pub difficulty: Vec<f64>,
    /// Length M, entries > 0.
    pub discrimination: Vec<f64>,
}

impl SyntheticGroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }

    /// Probability that student `s` answers exercise `e` correctly.
    pub fn response_probability(&self, q: &QMatrix, noise: f64, s: usize, e: usize) -> f64 {
        let concepts = q.concepts(e);
        let mean = concepts.iter().map(|&c| self.mastery[s][c]).sum::<f64>() / concepts.len() as f64;
        sigmoid(self.discrimination[e] * (mean - self.difficulty[e]) / noise)
    }
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(Dataset, SyntheticGroundTruth)> {
    config.validate()?;
    let mut rng = seeding::stream(seed, &[domain::SYNTHETIC]);
    let (n, m, c) = (config.num_students, config.num_exercises, config.num_concepts);

    let mastery: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..c)
                .map(|_| {
                    let v = rng.random::<f64>();
                    config.fixed_mastery.unwrap_or(v)
                })
                .collect()
        })
        .collect();

    let mut difficulty = Vec::with_capacity(m);
    let mut discrimination = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    let (lo, hi) = config.concepts_per_exercise;
    let (dlo, dhi) = config.discrimination;
    for _ in 0..m {
        let d = rng.random::<f64>();
        difficulty.push(config.fixed_difficulty.unwrap_or(d));
        discrimination.push(dlo + (dhi - dlo) * rng.random::<f64>());
        let k = rng.random_range(lo..=hi);
        rows.push(index::sample(&mut rng, c, k).into_vec());
    }
    let q_matrix = QMatrix::from_rows(c, rows)?;
    let truth = SyntheticGroundTruth {
        mastery,
        difficulty,
        discrimination,
    };

    let mut interactions = Vec::with_capacity(n * config.logs_per_student);
    for s in 0..n {
        for e in index::sample(&mut rng, m, config.logs_per_student) {
            let p = truth.response_probability(&q_matrix, config.noise, s, e);
            let correct = rng.random::<f64>() < p;
            interactions.push(Interaction::new(s, e, correct));
        }
    }
    let dataset = Dataset::new(n, interactions, q_matrix)?;
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            num_students: 30,
            num_exercises: 25,
            num_concepts: 6,
            logs_per_student: 10,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate_synthetic(&small(), 5).unwrap();
        let b = generate_synthetic(&small(), 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_synthetic(&small(), 6).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn shapes_and_ranges() {
        let (ds, truth) = generate_synthetic(&small(), 1).unwrap();
        assert_eq!(ds.num_students, 30);
        assert_eq!(ds.interactions.len(), 300);
        assert_eq!(truth.mastery.len(), 30);
        assert!(truth.mastery.iter().all(|r| r.len() == 6 && r.iter().all(|v| (0.0..=1.0).contains(v))));
        assert!(truth.discrimination.iter().all(|&d| d > 0.0));
        for e in 0..ds.num_exercises {
            let k = ds.q_matrix.concepts(e).len();
            assert!((1..=3).contains(&k));
        }
    }

    #[test]
    fn forced_mastery_gives_high_probabilities() {
        let cfg = SyntheticConfig {
            fixed_mastery: Some(1.0),
            fixed_difficulty: Some(0.0),
            ..small()
        };
        let (ds, truth) = generate_synthetic(&cfg, 2).unwrap();
        for it in &ds.interactions {
            assert!(truth.response_probability(&ds.q_matrix, cfg.noise, it.student, it.exercise) > 0.5);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small();
        cfg.num_exercises = 0;
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Validation(_))));
        let mut cfg = small();
        cfg.logs_per_student = 26;
        assert!(generate_synthetic(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.concepts_per_exercise = (2, 7);
        assert!(generate_synthetic(&cfg, 0).is_err());
    }
}
