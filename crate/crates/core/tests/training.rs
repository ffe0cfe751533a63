use cmes_core::data::{generate_synthetic, split_per_student, DataSplit, Dataset, SplitRatios, SyntheticConfig};
use cmes_core::mixer::MixedSample;
use cmes_core::model::{ModelKind, ScoreBatch};
use cmes_core::params::{Adam, AdamConfig};
use cmes_core::train::{
    batch_step, build_sampler, check_objective, gradient_check, train, Assembly, Checkpoint, RunOptions, Strategy, TrainConfig,
};

fn tiny() -> (Dataset, DataSplit) {
    let config = SyntheticConfig {
        num_students: 8,
        num_exercises: 14,
        num_concepts: 6,
        logs_per_student: 7,
        concepts_per_exercise: (1, 2),
        noise: 0.3,
        ..Default::default()
    };
    let (ds, _) = generate_synthetic(&config, 3).unwrap();
    let ratios = SplitRatios { train: 0.6, val: 0.2, test: 0.2 };
    let split = split_per_student(&ds.interactions, ratios, 3).unwrap();
    (ds, split)
}

fn tiny_config(model: ModelKind, strategy: Strategy, seed: u64) -> TrainConfig {
    TrainConfig {
        model,
        strategy,
        n: 2,
        clusters: 2,
        hidden: (5, 4),
        batch_size: 16,
        epochs: 3,
        seed,
        ..Default::default()
    }
}

#[test]
fn objective_gradients_match_finite_differences() {
    let (ds, split) = tiny();
    for model in [ModelKind::Ncd, ModelKind::Irt, ModelKind::Mirt] {
        for strategy in Strategy::ALL {
            let config = tiny_config(model, strategy, 5);
            let (sampler, _) = build_sampler(&config, &ds, &split.train).unwrap();
            let plan = sampler.map(|s| s.plan(config.seed, 0));
            let mut asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
            if let Some(p) = &plan {
                assert!(split.train.iter().any(|it| p.group(it.student, it.exercise).is_some()));
            }
            let report = check_objective(&mut asm, &split.train, plan.as_ref(), 0.7, 1e-5, Some(20), 11).unwrap();
            let worst = report.worst().unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{model}/{strategy}: {} max rel error {:e}",
                worst.name,
                worst.max_rel_error
            );
        }
    }
}

#[test]
fn first_adam_step_decreases_the_objective() {
    let (ds, split) = tiny();
    for seed in 0..10 {
        let config = tiny_config(ModelKind::Ncd, Strategy::Cmes, seed);
        let (sampler, _) = build_sampler(&config, &ds, &split.train).unwrap();
        let plan = sampler.map(|s| s.plan(seed, 0)).unwrap();
        let mut asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
        let mut grads = asm.store.zero_grads();
        let before = batch_step(&asm, &split.train, Some(&plan), 1.0, None, Some(&mut grads)).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 1e-4, ..Default::default() }, &asm.store);
        adam.step(&mut asm.store, &grads);
        asm.store.clamp_nonnegative();
        let labels = before.labels();
        let after = batch_step(&asm, &split.train, Some(&plan), 1.0, Some(&labels), None).unwrap();
        assert!(
            after.losses.total(1.0) < before.losses.total(1.0),
            "seed {seed}: {} -> {}",
            before.losses.total(1.0),
            after.losses.total(1.0)
        );
    }
}

#[test]
fn zero_balance_leaves_feedback_copy_untouched() {
    let (ds, split) = tiny();
    for strategy in [Strategy::Cmes, Strategy::Rss] {
        let config = TrainConfig { balance: 0.0, epochs: 1, ..tiny_config(ModelKind::Ncd, strategy, 2) };
        let init = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
        let out = train(&config, &ds, &split, &RunOptions::default()).unwrap();
        let f1 = init.f1.as_ref().unwrap();
        let mut changed_f2 = false;
        for id in f1.tensors() {
            assert_eq!(init.store.get(id), out.assembly.store.get(id), "{}", init.store.name(id));
        }
        for id in out.assembly.f2.tensors() {
            changed_f2 |= init.store.get(id) != out.assembly.store.get(id);
        }
        assert!(changed_f2);
    }
}

#[test]
fn original_strategy_matches_a_plain_trainer() {
    let (ds, split) = tiny();
    let config = TrainConfig { patience: 100, ..tiny_config(ModelKind::Mirt, Strategy::Original, 4) };
    let out = train(&config, &ds, &split, &RunOptions::default()).unwrap();
    assert!(out.assembly.f1.is_none() && out.assembly.mixer.is_none());

    // standalone loop: same init stream, shuffle stream, loss and optimizer
    use cmes_core::seeding::{self, domain};
    use rand::seq::SliceRandom;
    let mut asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..Default::default() }, &asm.store);
    let mut best = (f64::NEG_INFINITY, asm.store.clone());
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut seeding::stream(config.seed, &[domain::SHUFFLE, epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| split.train[i]).collect();
            let vb = asm.interacted_batch(&batch);
            let cache = asm.f2.forward(&asm.store, &vb).unwrap();
            let d: Vec<f64> = cache
                .probs
                .iter()
                .zip(&batch)
                .map(|(&y, it)| if it.correct { -1.0 / y } else { 1.0 / (1.0 - y) })
                .collect();
            let mut grads = asm.store.zero_grads();
            let dv = asm.f2.backward(&asm.store, &vb, &cache, &d, &mut grads);
            for (it, row) in batch.iter().zip(dv.rows()) {
                let mut dst = grads.get_mut(asm.embedding.id).row_mut(it.exercise).to_owned();
                dst += &row;
                grads.get_mut(asm.embedding.id).row_mut(it.exercise).assign(&dst);
            }
            adam.step(&mut asm.store, &grads);
        }
        let preds = asm.predict(&split.val).unwrap();
        let labels: Vec<bool> = split.val.iter().map(|it| it.correct).collect();
        let auc = cmes_core::metrics::auc(&preds, &labels).unwrap();
        if auc > best.0 {
            best = (auc, asm.store.clone());
        }
    }
    asm.store = best.1;
    assert_eq!(asm.predict(&split.test).unwrap(), out.assembly.predict(&split.test).unwrap());
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let (ds, split) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(ModelKind::Ncd, Strategy::Cmes, 9);
    let out = train(&config, &ds, &split, &RunOptions { out_dir: Some(dir.path().to_path_buf()), ..Default::default() }).unwrap();
    let ckpt = Checkpoint::load(dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ckpt, out.checkpoint);
    assert_eq!(ckpt.config_hash, out.config_hash);
    let restored = ckpt.restore(&ds.q_matrix).unwrap();
    assert_eq!(restored.store, out.assembly.store);
    assert_eq!(restored.predict(&split.test).unwrap(), out.assembly.predict(&split.test).unwrap());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,acc,rmse,auc,loss_inter,loss_uninter,loss_feedback\n"));
    assert!(metrics.lines().last().unwrap().contains(",test,"));
}

#[test]
fn checkpoint_rejects_foreign_q_matrix() {
    let (ds, split) = tiny();
    let config = tiny_config(ModelKind::Irt, Strategy::Original, 1);
    let out = train(&config, &ds, &split, &RunOptions::default()).unwrap();
    let other = generate_synthetic(&SyntheticConfig { num_exercises: 20, num_students: 8, logs_per_student: 7, num_concepts: 6, ..Default::default() }, 1)
        .unwrap()
        .0;
    assert!(out.checkpoint.restore(&other.q_matrix).is_err());
}

#[test]
fn training_is_deterministic() {
    let (ds, split) = tiny();
    for strategy in Strategy::ALL {
        let config = tiny_config(ModelKind::Ncd, strategy, 21);
        let a = train(&config, &ds, &split, &RunOptions::default()).unwrap();
        let b = train(&config, &ds, &split, &RunOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.test, b.test);
        assert_eq!(a.assembly.store, b.assembly.store);
    }
}

#[test]
fn constrained_weights_stay_nonnegative() {
    let (ds, split) = tiny();
    let config = TrainConfig { epochs: 10, patience: 100, batch_size: 4, ..tiny_config(ModelKind::Ncd, Strategy::Cmes, 8) };
    let out = train(&config, &ds, &split, &RunOptions::default()).unwrap();
    let store = &out.assembly.store;
    for id in store.ids().filter(|&id| store.is_nonnegative(id)) {
        assert!(store.get(id).iter().all(|&v| v >= 0.0), "{}", store.name(id));
    }
}

#[test]
fn updating_one_copy_leaves_the_other_unchanged() {
    let (ds, split) = tiny();
    let config = tiny_config(ModelKind::Ncd, Strategy::Cmes, 6);
    let mut asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
    let f2_before = asm.predict(&split.test).unwrap();
    let f1 = asm.f1.clone().unwrap();
    let probe = asm.interacted_batch(&split.test);
    let f1_before = f1.predict(&asm.store, &probe).unwrap();
    for id in f1.tensors() {
        asm.store.get_mut(id).mapv_inplace(|v| v * 1.5 + 0.01);
    }
    assert_eq!(asm.predict(&split.test).unwrap(), f2_before);
    for id in asm.f2.tensors() {
        asm.store.get_mut(id).mapv_inplace(|v| v * 0.5);
    }
    let f1_probe = probe;
    assert_ne!(f1.predict(&asm.store, &f1_probe).unwrap(), f1_before);
    let f1_after_f2_change = f1.predict(&asm.store, &f1_probe).unwrap();
    for id in asm.f2.tensors() {
        asm.store.get_mut(id).mapv_inplace(|v| v + 0.3);
    }
    assert_eq!(f1.predict(&asm.store, &f1_probe).unwrap(), f1_after_f2_change);
}

#[test]
fn pseudo_labels_ignore_the_diagnosis_copy() {
    let (ds, split) = tiny();
    let config = tiny_config(ModelKind::Ncd, Strategy::Cmes, 12);
    let (sampler, _) = build_sampler(&config, &ds, &split.train).unwrap();
    let plan = sampler.unwrap().plan(config.seed, 0);
    let mut asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
    let base = batch_step(&asm, &split.train, Some(&plan), 1.0, None, None).unwrap();
    assert!(!base.samples.is_empty());
    for id in asm.f2.tensors() {
        asm.store.get_mut(id).mapv_inplace(|v| v + 1e-3);
    }
    let moved = batch_step(&asm, &split.train, Some(&plan), 1.0, None, None).unwrap();
    assert_eq!(base.labels(), moved.labels());
    assert_ne!(base.losses.inter, moved.losses.inter);
}

#[test]
fn mixed_prediction_of_a_plain_embedding_equals_the_answered_prediction() {
    let (ds, _) = tiny();
    let config = tiny_config(ModelKind::Ncd, Strategy::Cmes, 1);
    let asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
    for e in 0..ds.num_exercises {
        let sample = MixedSample {
            student: 3,
            source: e,
            constituents: vec![],
            vector: asm.embedding.embed(&asm.store, e).unwrap().to_vec(),
            pseudo_label: None,
            concept_mask: ds.q_matrix.dense_row(e),
        };
        let direct = asm.f2.predict_interacted(&asm.store, &asm.embedding, &ds.q_matrix, 3, e).unwrap();
        assert_eq!(asm.f2.predict_mixed(&asm.store, &sample).unwrap(), direct);
    }
}

#[test]
fn gradient_check_catches_a_one_percent_error() {
    let (ds, split) = tiny();
    let config = tiny_config(ModelKind::Ncd, Strategy::Cmes, 5);
    let (sampler, _) = build_sampler(&config, &ds, &split.train).unwrap();
    let plan = sampler.unwrap().plan(config.seed, 0);
    let asm = Assembly::new(&config, ds.num_students, &ds.q_matrix).unwrap();
    let mut grads = asm.store.zero_grads();
    let out = batch_step(&asm, &split.train, Some(&plan), 1.0, None, Some(&mut grads)).unwrap();
    let labels = out.labels();
    for name in ["attention.w_k", "f1.w1", "f2.theta", "embedding"] {
        let id = asm.store.ids().find(|&id| asm.store.name(id) == name).unwrap();
        let mut bad = grads.clone();
        bad.get_mut(id).mapv_inplace(|g| g * 1.01);
        let mut store = asm.store.clone();
        let report = gradient_check(
            &mut store,
            &bad,
            |s| {
                let mut p = asm.clone();
                p.store.clone_from(s);
                Ok(batch_step(&p, &split.train, Some(&plan), 1.0, Some(&labels), None)?.losses.total(1.0))
            },
            1e-5,
            None,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-3, "{name}: {report:?}");
        assert_eq!(report.worst().unwrap().name, name);
    }
}
