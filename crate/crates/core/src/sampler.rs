//! Collaboration-aware sampling of un-interacted exercises.
//!
//! A student may be offered an exercise only if
//!
//! 1. some student in a *different* cluster answered it in train,
//! 2. it shares no concept with the student's practised concepts `K_i`, and
//! 3. the student has not answered it.
//!
//! From that pool, `2n` candidates are drawn without replacement with
//! probability proportional to the number of distinct other-cluster students
//! who answered them. Each answered exercise then gets `n` of the candidates
//! attached, drawn uniformly and independently per exercise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::debug;
use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{Interaction, QMatrix, StudentProfile};
use crate::error::Result;
use crate::seeding::{self, domain};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub student: usize,
    pub candidates: Vec<usize>,
    /// Popularity weight of each drawn candidate.
    pub weights: BTreeMap<usize, u32>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }
}

/// One answered exercise plus the candidates that will be mixed into it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixGroup {
    pub student: usize,
    pub source: usize,
    pub attached: Vec<usize>,
}

impl MixGroup {
    /// Source first, then the attached candidates.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.source).chain(self.attached.iter().copied())
    }
}

/// Distinct-answerer counts per exercise, overall and per cluster.
#[derive(Clone, Debug)]
pub struct Popularity {
    total: Vec<u32>,
    per_cluster: Vec<Vec<u32>>,
}

impl Popularity {
    pub fn new(train: &[Interaction], clusters: &ClusterAssignment, num_exercises: usize) -> Self {
        let mut total = vec![0u32; num_exercises];
        let mut per_cluster = vec![vec![0u32; num_exercises]; clusters.num_clusters];
        let mut seen = std::collections::BTreeSet::new();
        for it in train {
            if !seen.insert((it.student, it.exercise)) {
                continue;
            }
            total[it.exercise] += 1;
            if let Some(c) = clusters.cluster_of(it.student) {
                per_cluster[c][it.exercise] += 1;
            }
        }
        Self { total, per_cluster }
    }

    /// Students outside `cluster` who answered `exercise`.
    pub fn outside(&self, exercise: usize, cluster: usize) -> u32 {
        self.total[exercise] - self.per_cluster[cluster][exercise]
    }
}

/// Everything the sampler needs that is fixed for a whole training run.
#[derive(Clone, Debug)]
pub struct SamplingContext {
    q: QMatrix,
    clusters: ClusterAssignment,
    popularity: Popularity,
}

impl SamplingContext {
    pub fn new(train: &[Interaction], clusters: ClusterAssignment, q: &QMatrix) -> Self {
        let popularity = Popularity::new(train, &clusters, q.num_exercises());
        Self {
            q: q.clone(),
            clusters,
            popularity,
        }
    }

    pub fn clusters(&self) -> &ClusterAssignment {
        &self.clusters
    }

    pub fn popularity(&self) -> &Popularity {
        &self.popularity
    }

    /// Sorted pool of exercises eligible for `profile`. Students without a
    /// cluster get an empty pool.
    pub fn eligible_pool(&self, profile: &StudentProfile) -> Vec<usize> {
        let Some(cluster) = self.clusters.cluster_of(profile.student) else {
            return Vec::new();
        };
        (0..self.q.num_exercises())
            .filter(|&e| self.popularity.outside(e, cluster) > 0)
            .filter(|&e| !profile.touches(&self.q, e))
            .filter(|&e| !profile.has_exercise(e))
            .collect()
    }

    pub fn pool_weights(&self, profile: &StudentProfile, pool: &[usize]) -> Vec<u32> {
        let cluster = self.clusters.cluster_of(profile.student).unwrap_or(0);
        pool.iter().map(|&e| self.popularity.outside(e, cluster)).collect()
    }
}

/// Free-standing form of [`SamplingContext::eligible_pool`].
pub fn eligible_pool(
    profile: &StudentProfile,
    clusters: &ClusterAssignment,
    train: &[Interaction],
    q: &QMatrix,
) -> Vec<usize> {
    SamplingContext::new(train, clusters.clone(), q).eligible_pool(profile)
}

/// Weighted draw without replacement of `min(count, pool.len())` exercises.
/// Zero-weight entries are never drawn.
pub fn sample_candidates<R: Rng + ?Sized>(
    student: usize,
    pool: &[usize],
    weights: &[u32],
    count: usize,
    rng: &mut R,
) -> CandidateSet {
    debug_assert_eq!(pool.len(), weights.len());
    let items: Vec<(usize, u32)> = pool
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0)
        .collect();
    if items.is_empty() {
        debug!("student {student}: empty candidate pool");
        return CandidateSet {
            student,
            candidates: Vec::new(),
            weights: BTreeMap::new(),
        };
    }
    let amount = count.min(items.len());
    let chosen: Vec<(usize, u32)> = items
        .choose_multiple_weighted(rng, amount, |&(_, w)| f64::from(w))
        .expect("positive finite weights")
        .copied()
        .collect();
    CandidateSet {
        student,
        candidates: chosen.iter().map(|&(e, _)| e).collect(),
        weights: chosen.into_iter().collect(),
    }
}

/// One [`MixGroup`] per answered exercise, each with `min(n, |candidates|)`
/// candidates drawn uniformly without replacement. No groups when the
/// candidate set is empty.
pub fn attach_candidates<R: Rng + ?Sized>(
    candidates: &CandidateSet,
    profile: &StudentProfile,
    n: usize,
    rng: &mut R,
) -> Vec<MixGroup> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let k = n.min(candidates.len());
    profile
        .exercises
        .iter()
        .map(|&source| MixGroup {
            student: profile.student,
            source,
            attached: index::sample(rng, candidates.len(), k)
                .into_iter()
                .map(|i| candidates.candidates[i])
                .collect(),
        })
        .collect()
}

/// How extra exercises are chosen for a student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    /// Cross-cluster, concept-excluding, popularity-weighted candidates.
    Collaborative,
    /// Uniform draws from every un-answered exercise.
    Uniform,
}

/// All mix groups for one epoch, indexed by student.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SamplingPlan {
    groups: Vec<Vec<MixGroup>>,
    candidates: Vec<Option<CandidateSet>>,
}

impl SamplingPlan {
    /// The group whose source is `exercise`, if the student has one.
    pub fn group(&self, student: usize, exercise: usize) -> Option<&MixGroup> {
        let groups = self.groups.get(student)?;
        groups
            .binary_search_by_key(&exercise, |g| g.source)
            .ok()
            .map(|i| &groups[i])
    }

    pub fn groups_of(&self, student: usize) -> &[MixGroup] {
        self.groups.get(student).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn candidates_of(&self, student: usize) -> Option<&CandidateSet> {
        self.candidates.get(student).and_then(Option::as_ref)
    }

    /// Prospective mixed samples of `student` under attention mixing.
    pub fn mixed_count(&self, student: usize) -> usize {
        self.sample_count(student, 1)
    }

    /// Samples `student` yields in this plan when each group contributes its
    /// attached exercises plus `per_group` extra rows.
    pub fn sample_count(&self, student: usize, per_group: usize) -> usize {
        self.groups_of(student).iter().map(|g| g.attached.len() + per_group).sum()
    }

    /// Writes `student_id,exercise_id,weight` rows for every candidate.
    pub fn write_audit(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "student_id,exercise_id,weight")?;
        for set in self.candidates.iter().flatten() {
            for &e in &set.candidates {
                writeln!(w, "{},{},{}", set.student, e, set.weights.get(&e).copied().unwrap_or(0))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Precomputed per-student pools; fixed for a run.
#[derive(Clone, Debug)]
pub struct Sampler {
    mode: SamplingMode,
    n: usize,
    profiles: Vec<Option<StudentProfile>>,
    pools: Vec<Vec<usize>>,
    weights: Vec<Vec<u32>>,
}

impl Sampler {
    pub fn collaborative(
        context: &SamplingContext,
        profiles: &BTreeMap<usize, StudentProfile>,
        num_students: usize,
        n: usize,
    ) -> Self {
        let mut sampler = Self::empty(SamplingMode::Collaborative, profiles, num_students, n);
        for (&s, p) in profiles {
            let pool = context.eligible_pool(p);
            sampler.weights[s] = context.pool_weights(p, &pool);
            sampler.pools[s] = pool;
        }
        sampler
    }

    pub fn uniform(
        profiles: &BTreeMap<usize, StudentProfile>,
        num_students: usize,
        num_exercises: usize,
        n: usize,
    ) -> Self {
        let mut sampler = Self::empty(SamplingMode::Uniform, profiles, num_students, n);
        for (&s, p) in profiles {
            sampler.pools[s] = (0..num_exercises).filter(|&e| !p.has_exercise(e)).collect();
        }
        sampler
    }

    fn empty(
        mode: SamplingMode,
        profiles: &BTreeMap<usize, StudentProfile>,
        num_students: usize,
        n: usize,
    ) -> Self {
        let size = profiles
            .keys()
            .next_back()
            .map_or(num_students, |&s| num_students.max(s + 1));
        let mut slots = vec![None; size];
        for (&s, p) in profiles {
            slots[s] = Some(p.clone());
        }
        Self {
            mode,
            n,
            profiles: slots,
            pools: vec![Vec::new(); size],
            weights: vec![Vec::new(); size],
        }
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pool(&self, student: usize) -> &[usize] {
        &self.pools[student]
    }

    /// The plan for `epoch`; each student draws from its own stream keyed by
    /// `(seed, epoch, student)`.
    pub fn plan(&self, seed: u64, epoch: usize) -> SamplingPlan {
        let mut plan = SamplingPlan {
            groups: vec![Vec::new(); self.profiles.len()],
            candidates: vec![None; self.profiles.len()],
        };
        for (s, profile) in self.profiles.iter().enumerate() {
            let Some(profile) = profile else { continue };
            let mut rng = seeding::stream(seed, &[domain::SAMPLER, epoch as u64, s as u64]);
            match self.mode {
                SamplingMode::Collaborative => {
                    let set = sample_candidates(s, &self.pools[s], &self.weights[s], 2 * self.n, &mut rng);
                    plan.groups[s] = attach_candidates(&set, profile, self.n, &mut rng);
                    plan.candidates[s] = Some(set);
                }
                SamplingMode::Uniform => {
                    let pool = &self.pools[s];
                    if pool.is_empty() || self.n == 0 {
                        continue;
                    }
                    let k = self.n.min(pool.len());
                    plan.groups[s] = profile
                        .exercises
                        .iter()
                        .map(|&source| MixGroup {
                            student: s,
                            source,
                            attached: index::sample(&mut rng, pool.len(), k)
                                .into_iter()
                                .map(|i| pool[i])
                                .collect(),
                        })
                        .collect();
                }
            }
        }
        plan
    }
}
