use std::path::{Path, PathBuf};

use cmes_core::data::{
    filter_min_logs, generate_synthetic, load_dataset, split_per_student, DataSplit, Dataset, SplitRatios,
    SyntheticConfig, SyntheticGroundTruth,
};
use cmes_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const Q_MATRIX_FILE: &str = "q_matrix.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const GEN_CONFIG_FILE: &str = "gen_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Files {
        interactions: PathBuf,
        q_matrix: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<PathBuf>,
    },
    /// Generated in memory.
    Synthetic { config: SyntheticConfig, seed: u64 },
}

impl DataSource {
    /// A directory written by `gen`, or any directory holding the two CSVs.
    pub fn from_dir(dir: &Path) -> Self {
        let truth = dir.join(GROUND_TRUTH_FILE);
        DataSource::Files {
            interactions: dir.join(INTERACTIONS_FILE),
            q_matrix: dir.join(Q_MATRIX_FILE),
            ground_truth: truth.exists().then_some(truth),
        }
    }
}

/// Filtered, split data plus ground-truth mastery rows aligned with the
/// filtered student indices.
pub struct Prepared {
    pub dataset: Dataset,
    pub split: DataSplit,
    pub truth: Option<Vec<Vec<f64>>>,
    /// Original ids of the filtered students and of the concepts.
    pub student_ids: Vec<String>,
    pub concept_ids: Vec<String>,
}

pub fn prepare(source: &DataSource, min_logs: usize, ratios: SplitRatios, seed: u64) -> Result<Prepared> {
    let (dataset, truth_rows, raw_students, concept_ids): (Dataset, Option<Vec<Option<Vec<f64>>>>, Vec<String>, Vec<String>) = match source {
        DataSource::Files {
            interactions,
            q_matrix,
            ground_truth,
        } => {
            let loaded = load_dataset(interactions, q_matrix)?;
            let truth = match ground_truth {
                Some(p) => {
                    let gt = SyntheticGroundTruth::load(p)?;
                    // raw student ids written by `gen` are ground-truth row numbers
                    let rows = (0..loaded.students.len())
                        .map(|s| {
                            loaded
                                .students
                                .raw(s)
                                .parse::<usize>()
                                .ok()
                                .and_then(|r| gt.mastery.get(r).cloned())
                        })
                        .collect();
                    Some(rows)
                }
                None => None,
            };
            let students = (0..loaded.students.len()).map(|s| loaded.students.raw(s).to_string()).collect();
            let concepts = (0..loaded.concepts.len()).map(|c| loaded.concepts.raw(c).to_string()).collect();
            (loaded.dataset, truth, students, concepts)
        }
        DataSource::Synthetic { config, seed } => {
            let (ds, gt) = generate_synthetic(config, *seed)?;
            let students = (0..ds.num_students).map(|s| s.to_string()).collect();
            let concepts = (0..ds.num_concepts).map(|c| c.to_string()).collect();
            (ds, Some(gt.mastery.into_iter().map(Some).collect()), students, concepts)
        }
    };
    let filtered = filter_min_logs(&dataset.interactions, min_logs);
    if filtered.kept_students.is_empty() {
        return Err(Error::Validation(format!("no student has at least {min_logs} logs")));
    }
    let truth = match truth_rows {
        Some(rows) => {
            let aligned: Option<Vec<Vec<f64>>> =
                filtered.kept_students.iter().map(|&s| rows.get(s).cloned().flatten()).collect();
            if aligned.is_none() {
                log::warn!("ground truth does not cover every student; mastery recovery disabled");
            }
            aligned
        }
        None => None,
    };
    let kept = filtered.kept_students.len();
    let dataset = Dataset::new(kept, filtered.interactions, dataset.q_matrix)?;
    let split = split_per_student(&dataset.interactions, ratios, seed)?;
    let student_ids = filtered.kept_students.iter().map(|&s| raw_students[s].clone()).collect();
    Ok(Prepared {
        dataset,
        split,
        truth,
        student_ids,
        concept_ids,
    })
}
