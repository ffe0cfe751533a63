//! Student clustering.
//!
//! Students are described by their smoothed per-concept correct rate and
//! grouped with Lloyd's k-means (k-means++ seeding, squared Euclidean
//! distance). The grouping drives which peers' exercises a student may be
//! offered by the sampler.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, QMatrix, StudentProfile};
use crate::error::{Error, Result};
use crate::seeding::{self, domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentFeature {
    pub student: usize,
    /// Length C, entries in [0,1].
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub num_clusters: usize,
    pub assignment: BTreeMap<usize, usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each centroid update.
    pub wcss_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, student: usize) -> Option<usize> {
        self.assignment.get(&student).copied()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .filter(move |(_, &c)| c == cluster)
            .map(|(&s, _)| s)
    }

    /// Writes `student_id,cluster_id` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "student_id,cluster_id")?;
        for (s, c) in &self.assignment {
            writeln!(w, "{s},{c}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Laplace-smoothed correct rate per concept: `(correct + 1) / (attempts + 2)`,
/// where an attempt is any train response on an exercise tagged with the
/// concept. Unseen concepts sit at 0.5.
pub fn student_features(
    profiles: &BTreeMap<usize, StudentProfile>,
    train: &[Interaction],
    q: &QMatrix,
) -> Vec<StudentFeature> {
    let c = q.num_concepts();
    let mut tallies: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = profiles
        .keys()
        .map(|&s| (s, (vec![0.0; c], vec![0.0; c])))
        .collect();
    for it in train {
        if let Some((correct, attempts)) = tallies.get_mut(&it.student) {
            for &k in q.concepts(it.exercise) {
                attempts[k] += 1.0;
                correct[k] += it.label();
            }
        }
    }
    tallies
        .into_iter()
        .map(|(student, (correct, attempts))| StudentFeature {
            student,
            vector: correct
                .iter()
                .zip(&attempts)
                .map(|(k, n)| (k + 1.0) / (n + 2.0))
                .collect(),
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest id.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    let k = centroids.len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, centroids).0).collect();
    // empty-cluster repair: hand each empty cluster the point farthest from
    // its centroid, taken from a cluster that can spare one
    loop {
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let donor = points
            .iter()
            .enumerate()
            .filter(|(i, _)| sizes[labels[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
            .fold(None::<(usize, f64)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        match donor {
            Some((i, _)) => {
                labels[i] = empty;
                centroids[empty] = points[i].to_vec();
            }
            None => break,
        }
    }
    labels
}

fn means(points: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Within-cluster sum of squared distances.
fn wcss(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Lloyd's k-means over `features`. Points are processed in student-id order,
/// so the resulting partition does not depend on the input order.
pub fn kmeans(
    features: &[StudentFeature],
    num_clusters: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    if num_clusters == 0 {
        return Err(Error::Validation("number of clusters must be >= 1".into()));
    }
    if num_clusters > features.len() {
        return Err(Error::Validation(format!(
            "{num_clusters} clusters requested for {} students",
            features.len()
        )));
    }
    let mut ordered: Vec<&StudentFeature> = features.iter().collect();
    ordered.sort_by_key(|f| f.student);
    let dim = ordered[0].vector.len();
    if ordered.iter().any(|f| f.vector.len() != dim) {
        return Err(Error::Validation("feature vectors differ in length".into()));
    }
    let points: Vec<&[f64]> = ordered.iter().map(|f| f.vector.as_slice()).collect();

    let mut rng = seeding::stream(seed, &[domain::KMEANS]);
    let mut centroids = seed_plus_plus(&points, num_clusters, &mut rng);
    let mut labels = assign(&points, &mut centroids);
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let updated = means(&points, &labels, num_clusters, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        trace.push(wcss(&points, &labels, &centroids));
        let relabeled = assign(&points, &mut centroids);
        let changed = relabeled != labels;
        labels = relabeled;
        if !changed && shift < tol {
            break;
        }
    }
    Ok(ClusterAssignment {
        num_clusters,
        assignment: ordered.iter().map(|f| f.student).zip(labels).collect(),
        centroids,
        wcss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn feats(values: &[f64]) -> Vec<StudentFeature> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| StudentFeature {
                student: i,
                vector: vec![v],
            })
            .collect()
    }

    fn partition(a: &ClusterAssignment) -> BTreeSet<BTreeSet<usize>> {
        (0..a.num_clusters)
            .map(|c| a.members(c).collect())
            .collect()
    }

    #[test]
    fn laplace_smoothing() {
        let q = QMatrix::from_pairs(3, 3, [(0, 0), (1, 0), (2, 0)]).unwrap();
        let train: Vec<Interaction> = (0..3).map(|e| Interaction::new(0, e, true)).collect();
        let profiles = crate::data::build_profiles(&train, &q);
        let f = student_features(&profiles, &train, &q);
        assert_eq!(f[0].vector, vec![0.8, 0.5, 0.5]);

        let q = QMatrix::from_pairs(1, 1, [(0, 0)]).unwrap();
        let train = vec![Interaction::new(4, 0, false)];
        let profiles = crate::data::build_profiles(&train, &q);
        let f = student_features(&profiles, &train, &q);
        assert_eq!(f[0].student, 4);
        assert!((f[0].vector[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let a = kmeans(&feats(&[0.0, 0.2, 0.7]), 1, 3, 100, 1e-6).unwrap();
        assert!(a.assignment.values().all(|&c| c == 0));
        assert!((a.centroids[0][0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn two_clusters_on_the_line() {
        // exhaustive oracle over all 2-partitions of the four points
        let values = [0.0, 0.1, 0.9, 1.0];
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let sse = |bit: u32| {
                let pts: Vec<f64> = (0..4).filter(|i| (mask >> i) & 1 == bit).map(|i| values[i]).collect();
                let m = pts.iter().sum::<f64>() / pts.len() as f64;
                pts.iter().map(|p| (p - m) * (p - m)).sum::<f64>()
            };
            let total = sse(0) + sse(1);
            if total < best.0 {
                best = (total, mask);
            }
        }
        let expected: BTreeSet<BTreeSet<usize>> = [0u32, 1]
            .iter()
            .map(|&bit| (0..4).filter(|i| (best.1 >> i) & 1 == bit).collect())
            .collect();
        for seed in 0..10 {
            let a = kmeans(&feats(&values), 2, seed, 100, 1e-6).unwrap();
            assert_eq!(partition(&a), expected);
            let mut cs: Vec<f64> = a.centroids.iter().map(|c| c[0]).collect();
            cs.sort_by(f64::total_cmp);
            assert!((cs[0] - 0.05).abs() < 1e-12 && (cs[1] - 0.95).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        assert!(matches!(kmeans(&feats(&[0.0, 1.0]), 3, 0, 10, 1e-6), Err(Error::Validation(_))));
        assert!(kmeans(&feats(&[0.0]), 0, 0, 10, 1e-6).is_err());
    }

    fn random_features(seed: u64, n: usize, dim: usize) -> Vec<StudentFeature> {
        let mut rng = seeding::stream(seed, &[]);
        (0..n)
            .map(|s| StudentFeature {
                student: s * 3 + 1,
                vector: (0..dim).map(|_| rng.random::<f64>()).collect(),
            })
            .collect()
    }

    #[test]
    fn deterministic_and_order_independent() {
        let f = random_features(1, 60, 4);
        let a = kmeans(&f, 5, 9, 100, 1e-6).unwrap();
        let b = kmeans(&f, 5, 9, 100, 1e-6).unwrap();
        assert_eq!(a, b);
        let mut shuffled = f.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let c = kmeans(&shuffled, 5, 9, 100, 1e-6).unwrap();
        assert_eq!(partition(&a), partition(&c));
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters() {
        let a = kmeans(&feats(&[0.5, 0.5, 0.5, 0.5]), 3, 2, 100, 1e-6).unwrap();
        let used: BTreeSet<usize> = a.assignment.values().copied().collect();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn lloyd_invariants() {
        for seed in 0..5 {
            let f = random_features(seed, 80, 3);
            let a = kmeans(&f, 6, seed, 200, 1e-9).unwrap();
            for w in a.wcss_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", a.wcss_trace);
            }
            for feat in &f {
                let c = a.cluster_of(feat.student).unwrap();
                assert_eq!(nearest(&feat.vector, &a.centroids).0, c);
            }
        }
    }
}
