//! Objective assembly, the epoch loop, checkpoints and gradient checks.
//!
//! Gradient routing: the diagnosis losses (answered and mixed samples) reach
//! f2, the embedding table and the attention block; the ranking loss, scaled
//! by `balance`, reaches f1, the embedding table and the attention block.
//! Pseudo labels are constants.

mod checkpoint;
mod config;
mod gradcheck;
mod step;

use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, student_features, ClusterAssignment};
use crate::data::{build_profiles, subsample_per_student, DataSplit, Dataset, Interaction};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auc, rmse, MetricsReport};
use crate::params::{Adam, AdamConfig};
use crate::sampler::{Sampler, SamplingContext, SamplingPlan};
use crate::seeding::{self, domain};

pub use checkpoint::{Checkpoint, NamedTensor, RngState};
pub use config::{Strategy, TrainConfig};
pub use gradcheck::{check_objective, gradient_check, relative_error, GradCheckReport, TensorCheck, RELATIVE_ERROR_FLOOR};
pub use step::{batch_step, loss_inter, loss_uninter, total_loss, Assembly, LossParts, SampleRecord, StepOutput};

/// One line of the per-epoch metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub acc: f64,
    pub rmse: f64,
    pub auc: f64,
    pub loss_inter: Option<f64>,
    pub loss_uninter: Option<f64>,
    pub loss_feedback: Option<f64>,
}

impl EpochRecord {
    fn from_preds(epoch: usize, split: &str, preds: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(Self {
            epoch,
            split: split.to_string(),
            acc: accuracy(preds, labels)?,
            rmse: rmse(preds, labels)?,
            auc: auc(preds, labels)?,
            loss_inter: Some(loss_inter(preds, labels)),
            loss_uninter: None,
            loss_feedback: None,
        })
    }
}

pub fn write_epoch_records(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Optional side outputs of a run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Receives `metrics.csv`, `checkpoint.json`, and the optional dumps.
    pub out_dir: Option<PathBuf>,
    /// Epoch whose candidate sets are written to `sampler_audit.csv`.
    pub audit_epoch: Option<usize>,
    /// Epoch whose pseudo labels are written to `pseudo_labels.csv`.
    pub label_dump_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Parameters of the best validation epoch.
    pub assembly: Assembly,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub clusters: Option<ClusterAssignment>,
    pub checkpoint: Checkpoint,
}

fn labels_of(interactions: &[Interaction]) -> Vec<bool> {
    interactions.iter().map(|it| it.correct).collect()
}

/// Builds the per-run sampler for the strategy (clustering happens here, once).
pub fn build_sampler(
    config: &TrainConfig,
    dataset: &Dataset,
    train: &[Interaction],
) -> Result<(Option<Sampler>, Option<ClusterAssignment>)> {
    let profiles = build_profiles(train, &dataset.q_matrix);
    match config.strategy {
        Strategy::Original => Ok((None, None)),
        Strategy::Rss => Ok((
            Some(Sampler::uniform(&profiles, dataset.num_students, dataset.num_exercises, config.n)),
            None,
        )),
        Strategy::Cmes => {
            let features = student_features(&profiles, train, &dataset.q_matrix);
            let k = config.clusters.min(features.len());
            if k < config.clusters {
                warn!("only {} students to cluster; using {k} clusters instead of {}", features.len(), config.clusters);
            }
            let clusters = kmeans(&features, k, config.seed, config.kmeans_iters, 1e-10)?;
            let context = SamplingContext::new(train, clusters.clone(), &dataset.q_matrix);
            Ok((
                Some(Sampler::collaborative(&context, &profiles, dataset.num_students, config.n)),
                Some(clusters),
            ))
        }
    }
}

fn write_label_dump(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["student_id", "source_exercise", "score", "label"])?;
    for r in samples {
        w.write_record([
            r.student.to_string(),
            r.source.to_string(),
            r.score.to_string(),
            u8::from(r.label).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains under `config` on `split` and evaluates the best-validation
/// parameters on the test part.
pub fn train(config: &TrainConfig, dataset: &Dataset, split: &DataSplit, options: &RunOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Validation("train, validation and test parts must be non-empty".into()));
    }
    let fingerprint = dataset.fingerprint();
    let config_hash = config.hash(&fingerprint);
    let train_set = subsample_per_student(&split.train, config.train_frac, config.seed)?;
    let (sampler, clusters) = build_sampler(config, dataset, &train_set)?;
    let mut asm = Assembly::new(config, dataset.num_students, &dataset.q_matrix)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &asm.store,
    );
    let mut grads = asm.store.zero_grads();
    let val_labels = labels_of(&split.val);
    let out_dir = options.out_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    info!(
        "training {} / {} on {} train logs (config {config_hash})",
        config.model,
        config.strategy,
        train_set.len()
    );

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::params::ParamStore)> = None;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        let plan: Option<SamplingPlan> = sampler.as_ref().map(|s| s.plan(config.seed, epoch));
        if let (Some(dir), Some(plan), Some(e)) = (out_dir, &plan, options.audit_epoch) {
            if e == epoch {
                plan.write_audit(dir.join("sampler_audit.csv"))?;
            }
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seeding::stream(config.seed, &[domain::SHUFFLE, epoch as u64]));
        let mut losses = LossParts::default();
        let mut train_preds = Vec::with_capacity(train_set.len());
        let mut train_labels = Vec::with_capacity(train_set.len());
        let mut dumped = Vec::new();
        let dump = options.label_dump_epoch == Some(epoch);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Interaction> = chunk.iter().map(|&i| train_set[i]).collect();
            grads.zero();
            let out = batch_step(&asm, &batch, plan.as_ref(), config.balance, None, Some(&mut grads))?;
            let bad = if !out.losses.is_finite() {
                Some("non-finite loss".to_string())
            } else {
                grads.first_non_finite().map(|id| format!("non-finite gradient in `{}`", asm.store.name(id)))
            };
            if let Some(message) = bad {
                if let Some(dir) = out_dir {
                    let path = dir.join("diverged_checkpoint.json");
                    Checkpoint::capture(&asm, config, &fingerprint, dataset.num_students, epoch, epoch).save(&path)?;
                    warn!("diagnostic checkpoint written to {}", path.display());
                }
                return Err(Error::Diverged { epoch, message });
            }
            losses += out.losses;
            train_preds.extend_from_slice(&out.preds);
            train_labels.extend(batch.iter().map(|it| it.correct));
            if dump {
                dumped.extend(out.samples);
            }
            adam.step(&mut asm.store, &grads);
            asm.store.clamp_nonnegative();
        }
        epochs_run = epoch + 1;
        if dump {
            if let Some(dir) = out_dir {
                write_label_dump(&dir.join("pseudo_labels.csv"), &dumped)?;
            }
        }
        let mut train_rec = EpochRecord::from_preds(epoch, "train", &train_preds, &train_labels)?;
        train_rec.loss_inter = Some(losses.inter);
        train_rec.loss_uninter = Some(losses.uninter);
        train_rec.loss_feedback = Some(losses.feedback);
        let val_preds = asm.predict(&split.val)?;
        let val_rec = EpochRecord::from_preds(epoch, "val", &val_preds, &val_labels)?;
        debug!(
            "epoch {epoch}: loss {:.4} (inter {:.4}, uninter {:.4}, feedback {:.4}), val auc {:.4}",
            losses.total(config.balance),
            losses.inter,
            losses.uninter,
            losses.feedback,
            val_rec.auc
        );
        let val_auc = val_rec.auc;
        history.push(train_rec);
        history.push(val_rec);
        match &best {
            Some((b, _, _)) if val_auc <= *b => {}
            _ => best = Some((val_auc, epoch, asm.store.clone())),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= config.patience {
            info!("early stop at epoch {epoch}; best validation AUC at epoch {best_epoch}");
            break;
        }
    }
    let (_, best_epoch, best_store) = best.expect("at least one epoch ran");
    asm.store = best_store;

    let val = MetricsReport::compute(&asm.predict(&split.val)?, &val_labels, config.seed, &config_hash)?;
    let test_labels = labels_of(&split.test);
    let test_preds = asm.predict(&split.test)?;
    let test = MetricsReport::compute(&test_preds, &test_labels, config.seed, &config_hash)?;
    let mut test_rec = EpochRecord::from_preds(best_epoch, "test", &test_preds, &test_labels)?;
    test_rec.loss_inter = Some(loss_inter(&test_preds, &test_labels));
    history.push(test_rec);
    let checkpoint = Checkpoint::capture(&asm, config, &fingerprint, dataset.num_students, best_epoch, epochs_run);
    if let Some(dir) = out_dir {
        write_epoch_records(dir.join("metrics.csv"), &history)?;
        checkpoint.save(dir.join("checkpoint.json"))?;
        if let Some(c) = &clusters {
            c.write_csv(dir.join("clusters.csv"))?;
        }
    }
    info!(
        "best epoch {best_epoch}: val auc {:.4}, test auc {:.4}",
        val.auc, test.auc
    );
    Ok(TrainOutcome {
        config: config.clone(),
        config_hash,
        assembly: asm,
        best_epoch,
        epochs_run,
        history,
        val,
        test,
        clusters,
        checkpoint,
    })
}
