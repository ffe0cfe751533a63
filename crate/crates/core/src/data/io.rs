//! Comma-separated interaction and Q-matrix files.
//!
//! Interactions: header `student_id,exercise_id,score`, score in {0,1}.
//! Q-matrix: header `exercise_id,concept_id`, one row per incidence.
//!
//! Raw ids are arbitrary strings. They are compacted to dense indices in
//! sorted order (numeric when every id parses as an integer, lexicographic
//! otherwise), so a dataset written with dense integer ids loads back
//! unchanged.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use super::{Dataset, Interaction, QMatrix};
use crate::error::{Error, Result};

/// Dense index <-> raw id table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_raw<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        let mut raw: Vec<String> = set.into_iter().collect();
        let numeric: Option<Vec<u64>> = raw.iter().map(|s| s.parse::<u64>().ok()).collect();
        if let Some(nums) = numeric {
            let mut keyed: Vec<(u64, String)> = nums.into_iter().zip(raw).collect();
            keyed.sort();
            raw = keyed.into_iter().map(|(_, s)| s).collect();
        }
        let index = raw.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { raw, index }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> &str {
        &self.raw[index]
    }
}

#[derive(Clone, Debug)]
pub struct LoadedInteractions {
    pub interactions: Vec<Interaction>,
    pub students: IdMap,
    pub exercises: IdMap,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub students: IdMap,
    pub exercises: IdMap,
    pub concepts: IdMap,
}

struct RawRecord {
    line: u64,
    a: String,
    b: String,
    c: Option<String>,
}

fn read_records(path: &Path, columns: &[&str]) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let mut positions = Vec::with_capacity(columns.len());
    for col in columns {
        match headers.iter().position(|h| h == *col) {
            Some(p) => positions.push(p),
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("missing column `{col}` in header"),
                })
            }
        }
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize| -> Result<String> {
            match record.get(positions[i]) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("missing value for `{}`", columns[i]),
                }),
            }
        };
        out.push(RawRecord {
            line,
            a: field(0)?,
            b: field(1)?,
            c: if columns.len() > 2 { Some(field(2)?) } else { None },
        });
    }
    Ok(out)
}

fn parse_score(path: &Path, line: u64, raw: &str) -> Result<bool> {
    let value: f64 = raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("score `{raw}` is not a number"),
    })?;
    if value == 0.0 {
        Ok(false)
    } else if value == 1.0 {
        Ok(true)
    } else {
        Err(Error::Validation(format!(
            "{}:{line}: score must be 0 or 1, got `{raw}`",
            path.display()
        )))
    }
}

struct RawInteraction {
    student: String,
    exercise: String,
    correct: bool,
}

fn read_raw_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    let records = read_records(path, &["student_id", "exercise_id", "score"])?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let correct = parse_score(path, r.line, r.c.as_deref().unwrap_or_default())?;
        if !seen.insert((r.a.clone(), r.b.clone())) {
            warn!(
                "{}:{}: duplicate response for ({}, {}); keeping the first",
                path.display(),
                r.line,
                r.a,
                r.b
            );
            continue;
        }
        out.push(RawInteraction {
            student: r.a,
            exercise: r.b,
            correct,
        });
    }
    Ok(out)
}

fn compact(raw: &[RawInteraction], students: &IdMap, exercises: &IdMap) -> Vec<Interaction> {
    raw.iter()
        .map(|r| {
            Interaction::new(
                students.index_of(&r.student).expect("student in map"),
                exercises.index_of(&r.exercise).expect("exercise in map"),
                r.correct,
            )
        })
        .collect()
}

/// Reads a response log on its own; N and M are the counts of distinct ids
/// seen in the file.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<LoadedInteractions> {
    let path = path.as_ref();
    let raw = read_raw_interactions(path)?;
    let students = IdMap::from_raw(raw.iter().map(|r| r.student.clone()));
    let exercises = IdMap::from_raw(raw.iter().map(|r| r.exercise.clone()));
    let interactions = compact(&raw, &students, &exercises);
    Ok(LoadedInteractions {
        interactions,
        students,
        exercises,
    })
}

/// Reads a Q-matrix file into raw `(exercise, concept)` pairs.
fn read_raw_q(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_records(path, &["exercise_id", "concept_id"])?
        .into_iter()
        .map(|r| (r.a, r.b))
        .collect())
}

/// Reads a standalone Q-matrix. Exercises are indexed by the ids in the file.
pub fn load_q_matrix(path: impl AsRef<Path>) -> Result<(QMatrix, IdMap, IdMap)> {
    let path = path.as_ref();
    let raw = read_raw_q(path)?;
    let exercises = IdMap::from_raw(raw.iter().map(|r| r.0.clone()));
    let concepts = IdMap::from_raw(raw.iter().map(|r| r.1.clone()));
    let q = QMatrix::from_pairs(
        exercises.len(),
        concepts.len(),
        raw.iter()
            .map(|r| (exercises.index_of(&r.0).unwrap(), concepts.index_of(&r.1).unwrap())),
    )?;
    Ok((q, exercises, concepts))
}

/// Loads a response log together with its Q-matrix. The exercise index space
/// is the union of exercises in both files; every exercise must have at
/// least one concept.
pub fn load_dataset(
    interactions_path: impl AsRef<Path>,
    q_path: impl AsRef<Path>,
) -> Result<LoadedDataset> {
    let ipath = interactions_path.as_ref();
    let qpath = q_path.as_ref();
    let raw = read_raw_interactions(ipath)?;
    let raw_q = read_raw_q(qpath)?;

    let students = IdMap::from_raw(raw.iter().map(|r| r.student.clone()));
    let exercises = IdMap::from_raw(
        raw.iter()
            .map(|r| r.exercise.clone())
            .chain(raw_q.iter().map(|r| r.0.clone())),
    );
    let concepts = IdMap::from_raw(raw_q.iter().map(|r| r.1.clone()));

    let mut covered = vec![false; exercises.len()];
    for r in &raw_q {
        covered[exercises.index_of(&r.0).unwrap()] = true;
    }
    if let Some(missing) = covered.iter().position(|c| !c) {
        return Err(Error::Validation(format!(
            "{}: exercise `{}` has no concept row",
            qpath.display(),
            exercises.raw(missing)
        )));
    }
    let q = QMatrix::from_pairs(
        exercises.len(),
        concepts.len(),
        raw_q
            .iter()
            .map(|r| (exercises.index_of(&r.0).unwrap(), concepts.index_of(&r.1).unwrap())),
    )?;
    let interactions = compact(&raw, &students, &exercises);
    let dataset = Dataset::new(students.len(), interactions, q)?;
    Ok(LoadedDataset {
        dataset,
        students,
        exercises,
        concepts,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(File::create(path)?))
}

pub fn write_interactions(path: impl AsRef<Path>, interactions: &[Interaction]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "student_id,exercise_id,score")?;
    for it in interactions {
        writeln!(w, "{},{},{}", it.student, it.exercise, u8::from(it.correct))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_q_matrix(path: impl AsRef<Path>, q: &QMatrix) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "exercise_id,concept_id")?;
    for (e, c) in q.pairs() {
        writeln!(w, "{e},{c}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `interactions.csv` and `q_matrix.csv` under `dir` and returns the
/// two paths.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let ipath = dir.join("interactions.csv");
    let qpath = dir.join("q_matrix.csv");
    write_interactions(&ipath, &dataset.interactions)?;
    write_q_matrix(&qpath, &dataset.q_matrix)?;
    Ok((ipath, qpath))
}
