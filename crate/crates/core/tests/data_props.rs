use std::collections::{BTreeMap, BTreeSet};

use cmes_core::data::{
    build_profiles, load_dataset, split_per_student, write_dataset, Dataset, Interaction, QMatrix, SplitRatios,
};
use proptest::prelude::*;

/// Random dataset: every exercise has 1..=3 concepts, responses are unique
/// per (student, exercise).
fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..12, 1usize..15, 1usize..6).prop_flat_map(|(n, m, c)| {
        let rows = proptest::collection::vec(proptest::collection::btree_set(0..c, 1..=3.min(c)), m);
        let logs = proptest::collection::btree_map((0..n, 0..m), any::<bool>(), 0..(n * m).min(60));
        (Just(n), Just(c), rows, logs).prop_map(|(n, c, rows, logs)| {
            let q = QMatrix::from_rows(c, rows.into_iter().map(|r| r.into_iter().collect()).collect()).unwrap();
            let interactions = logs.into_iter().map(|((s, e), r)| Interaction::new(s, e, r)).collect();
            Dataset::new(n, interactions, q).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_keeps_triplets_and_q_pairs(ds in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let (ipath, qpath) = write_dataset(dir.path(), &ds).unwrap();
        let loaded = load_dataset(ipath, qpath).unwrap();
        let raw_triplets: BTreeSet<(String, String, bool)> = loaded
            .dataset
            .interactions
            .iter()
            .map(|it| {
                (
                    loaded.students.raw(it.student).to_string(),
                    loaded.exercises.raw(it.exercise).to_string(),
                    it.correct,
                )
            })
            .collect();
        let expected: BTreeSet<(String, String, bool)> = ds
            .interactions
            .iter()
            .map(|it| (it.student.to_string(), it.exercise.to_string(), it.correct))
            .collect();
        prop_assert_eq!(raw_triplets, expected);
        let raw_pairs: BTreeSet<(String, String)> = loaded
            .dataset
            .q_matrix
            .pairs()
            .map(|(e, c)| (loaded.exercises.raw(e).to_string(), loaded.concepts.raw(c).to_string()))
            .collect();
        let expected: BTreeSet<(String, String)> =
            ds.q_matrix.pairs().map(|(e, c)| (e.to_string(), c.to_string())).collect();
        prop_assert_eq!(raw_pairs, expected);
    }

    #[test]
    fn split_partitions_each_student(ds in dataset(), seed in any::<u64>()) {
        let split = split_per_student(&ds.interactions, SplitRatios::default(), seed).unwrap();
        let mut per_student: BTreeMap<usize, usize> = BTreeMap::new();
        for it in &ds.interactions {
            *per_student.entry(it.student).or_default() += 1;
        }
        let kept: Vec<&Interaction> = ds.interactions.iter().filter(|it| per_student[&it.student] >= 3).collect();
        let parts: Vec<&Interaction> = split.train.iter().chain(&split.val).chain(&split.test).collect();
        prop_assert_eq!(parts.len(), kept.len());
        let union: BTreeSet<(usize, usize)> = parts.iter().map(|it| (it.student, it.exercise)).collect();
        prop_assert_eq!(union.len(), parts.len(), "parts overlap");
        let expected: BTreeSet<(usize, usize)> = kept.iter().map(|it| (it.student, it.exercise)).collect();
        prop_assert_eq!(union, expected);
    }

    #[test]
    fn profiles_depend_only_on_train(ds in dataset(), seed in any::<u64>(), other in any::<u64>()) {
        let split = split_per_student(&ds.interactions, SplitRatios::default(), seed).unwrap();
        let profiles = build_profiles(&split.train, &ds.q_matrix);
        let mut shuffled = split.train.clone();
        shuffled.reverse();
        let k = (other as usize) % shuffled.len().max(1);
        shuffled.rotate_left(k);
        prop_assert_eq!(&profiles, &build_profiles(&shuffled, &ds.q_matrix));
        for (s, p) in &profiles {
            let concepts: BTreeSet<usize> = split
                .train
                .iter()
                .filter(|it| it.student == *s)
                .flat_map(|it| ds.q_matrix.concepts(it.exercise).iter().copied())
                .collect();
            prop_assert_eq!(p.concepts.iter().copied().collect::<BTreeSet<_>>(), concepts);
        }
    }
}
