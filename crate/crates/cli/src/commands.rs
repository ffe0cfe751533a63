use std::path::{Path, PathBuf};

use cmes_core::data::{generate_synthetic, write_dataset, SplitRatios, SyntheticConfig};
use cmes_core::metrics::{mastery_recovery, MetricsReport};
use cmes_core::model::ModelKind;
use cmes_core::train::{self, Checkpoint, RunOptions, Strategy, TrainConfig, TrainOutcome};
use cmes_core::Error;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{prepare, DataSource, Prepared, GEN_CONFIG_FILE, GROUND_TRUTH_FILE, INTERACTIONS_FILE, Q_MATRIX_FILE};
use crate::{Cli, CliError, DataArgs, EvalArgs, GenArgs, TrainCmd, TrainFlags};

pub const RUN_CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORTS_FILE: &str = "reports.jsonl";

/// Everything a run consumed; enough to repeat it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub source: DataSource,
    pub min_logs: usize,
    pub split: SplitRatios,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub data_fingerprint: String,
    pub config_hash: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

impl DataArgs {
    pub fn source(&self) -> Result<DataSource, CliError> {
        if let Some(dir) = &self.data {
            return Ok(DataSource::from_dir(dir));
        }
        if let (Some(i), Some(q)) = (&self.interactions, &self.q_matrix) {
            return Ok(DataSource::Files {
                interactions: i.clone(),
                q_matrix: q.clone(),
                ground_truth: None,
            });
        }
        if let Some(seed) = self.synthetic_seed {
            return Ok(DataSource::Synthetic {
                config: SyntheticConfig::default(),
                seed,
            });
        }
        Err(Error::Config("no data: pass --data, --interactions/--q-matrix or --synthetic-seed".into()).into())
    }
}

impl TrainFlags {
    /// Applies the set flags on top of `base`, warning about flags the chosen
    /// strategy does not read.
    pub fn resolve(&self, base: TrainConfig) -> TrainConfig {
        let mut c = base;
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$target = v;
                }
            )*};
        }
        set!(model => model, strategy => strategy, n => n, clusters => clusters, alpha_w => alpha_w,
             beta_w => beta_w, balance => balance, lr => lr, batch => batch_size, epochs => epochs,
             seed => seed, patience => patience, train_frac => train_frac);
        if let Some(h) = self.hidden {
            c.hidden = h;
        }
        if self.dim.is_some() {
            c.dim = self.dim;
        }
        let ignored = |flag: &str| warn!("--{flag} has no effect with strategy {}; ignored", c.strategy);
        if c.strategy == Strategy::Original {
            if self.n.is_some() {
                ignored("n");
            }
            if self.balance.is_some() {
                ignored("balance");
            }
        }
        if c.strategy != Strategy::Cmes {
            for (flag, set) in [
                ("clusters", self.clusters.is_some()),
                ("alpha-w", self.alpha_w.is_some()),
                ("beta-w", self.beta_w.is_some()),
            ] {
                if set {
                    ignored(flag);
                }
            }
        }
        if c.model != ModelKind::Ncd && self.hidden.is_some() {
            warn!("--hidden only applies to ncd; ignored");
        }
        c
    }
}

fn ensure_writable(dir: &Path, files: &[&str], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    let existing: Vec<&str> = files.iter().copied().filter(|f| dir.join(f).exists()).collect();
    if existing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Refused(format!(
            "{} already contains {}; pass --force to overwrite",
            dir.display(),
            existing.join(", ")
        )))
    }
}

pub fn gen(cli: &Cli, a: &GenArgs) -> Result<(), CliError> {
    let config = SyntheticConfig {
        num_students: a.students,
        num_exercises: a.exercises,
        num_concepts: a.concepts,
        logs_per_student: a.logs_per_student,
        noise: a.noise,
        ..Default::default()
    };
    config.validate()?;
    let dir = a.out.clone().unwrap_or_else(|| cli.out_root.join(format!("synthetic-{}", a.seed)));
    ensure_writable(&dir, &[INTERACTIONS_FILE, Q_MATRIX_FILE, GROUND_TRUTH_FILE, GEN_CONFIG_FILE], a.force)?;
    let (dataset, truth) = generate_synthetic(&config, a.seed)?;
    std::fs::create_dir_all(&dir)?;
    write_dataset(&dir, &dataset)?;
    truth.save(dir.join(GROUND_TRUTH_FILE))?;
    let echo = serde_json::json!({ "seed": a.seed, "config": config });
    std::fs::write(dir.join(GEN_CONFIG_FILE), serde_json::to_string_pretty(&echo)? + "\n")?;
    println!("wrote {}", dir.display());
    println!(
        "students={} exercises={} concepts={} logs={} positive_rate={:.4}",
        dataset.num_students,
        dataset.num_exercises,
        dataset.num_concepts,
        dataset.interactions.len(),
        dataset.positive_rate()
    );
    Ok(())
}

/// Mastery recovery of the trained f2, when ground truth exists and the model
/// has a per-concept proficiency.
pub fn recovery(outcome_model: &train::Assembly, prepared: &Prepared) -> Option<f64> {
    let truth = prepared.truth.as_ref()?;
    if outcome_model.f2.kind == ModelKind::Irt {
        return None;
    }
    if outcome_model.embedding.dim != prepared.dataset.num_concepts {
        return None;
    }
    let mastery = outcome_model.f2.mastery(&outcome_model.store);
    let rows: Vec<Vec<f64>> = mastery.rows().into_iter().map(|r| r.to_vec()).collect();
    match mastery_recovery(&rows, truth) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("mastery recovery unavailable: {e}");
            None
        }
    }
}

fn write_mastery(path: &Path, asm: &train::Assembly, prepared: &Prepared) -> Result<(), CliError> {
    let mastery = asm.f2.mastery(&asm.store);
    let mut out = String::from("student_id,concept_id,mastery\n");
    for (s, row) in mastery.rows().into_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let concept = if asm.f2.kind == ModelKind::Irt {
                "*"
            } else {
                prepared.concept_ids.get(c).map_or("?", String::as_str)
            };
            out.push_str(&format!("{},{concept},{v}\n", prepared.student_ids[s]));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn default_run_name(c: &TrainConfig, hash: &str) -> String {
    format!("{}-{}-s{}-{}", c.model, c.strategy, c.seed, &hash[..8])
}

/// Prepares data, writes the resolved config and trains.
pub fn run_training(
    command: &str,
    source: DataSource,
    min_logs: usize,
    config: TrainConfig,
    out: Option<PathBuf>,
    out_root: &Path,
    force: bool,
    options: RunOptions,
) -> Result<(RunConfig, Prepared, TrainOutcome), CliError> {
    config.validate()?;
    let split = SplitRatios::default();
    let prepared = prepare(&source, min_logs, split, config.seed)?;
    let fingerprint = prepared.dataset.fingerprint();
    let hash = config.hash(&fingerprint);
    let dir = out.unwrap_or_else(|| out_root.join(default_run_name(&config, &hash)));
    ensure_writable(&dir, &[RUN_CONFIG_FILE, CHECKPOINT_FILE], force)?;
    std::fs::create_dir_all(&dir)?;
    let rc = RunConfig {
        command: command.to_string(),
        source,
        min_logs,
        split,
        train: config.clone(),
        out_dir: dir.clone(),
        data_fingerprint: fingerprint,
        config_hash: hash,
    };
    rc.save(&dir.join(RUN_CONFIG_FILE))?;
    let options = RunOptions {
        out_dir: Some(dir.clone()),
        ..options
    };
    let mut outcome = train::train(&config, &prepared.dataset, &prepared.split, &options)?;
    outcome.test.mastery_recovery = recovery(&outcome.assembly, &prepared);
    write_mastery(&dir.join("mastery.csv"), &outcome.assembly, &prepared)?;
    outcome.test.append_to(dir.join(REPORTS_FILE))?;
    Ok((rc, prepared, outcome))
}

pub fn train(cli: &Cli, a: &TrainCmd) -> Result<(), CliError> {
    let (source, min_logs, base) = match &a.config {
        Some(path) => {
            let rc = RunConfig::load(path)?;
            (rc.source, rc.min_logs, rc.train)
        }
        None => (a.data.source()?, a.data.min_logs, TrainConfig::default()),
    };
    let config = a.flags.resolve(base);
    println!("{}", serde_json::to_string(&config)?);
    let options = RunOptions {
        audit_epoch: a.audit_epoch,
        label_dump_epoch: a.dump_labels_epoch,
        ..Default::default()
    };
    let (rc, _, outcome) = run_training("train", source, min_logs, config, a.out.clone(), &cli.out_root, a.force, options)?;
    println!("run {}", rc.out_dir.display());
    println!(
        "epochs={} best_epoch={} val_auc={:.4}",
        outcome.epochs_run, outcome.best_epoch, outcome.val.auc
    );
    println!("test {}", outcome.test.to_line());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let rc = RunConfig::load(&a.run.join(RUN_CONFIG_FILE))?;
    let ckpt_path = a.checkpoint.clone().unwrap_or_else(|| a.run.join(CHECKPOINT_FILE));
    if !ckpt_path.exists() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", ckpt_path.display())).into());
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let prepared = prepare(&rc.source, rc.min_logs, rc.split, rc.train.seed)?;
    let fingerprint = prepared.dataset.fingerprint();
    let hash = rc.train.hash(&fingerprint);
    if hash != ckpt.config_hash {
        let reason = if fingerprint != ckpt.data_fingerprint {
            "the data no longer matches what the checkpoint was trained on"
        } else {
            "the run configuration differs from the checkpoint's"
        };
        return Err(CliError::Refused(format!(
            "config hash {hash} does not match checkpoint hash {}: {reason}",
            ckpt.config_hash
        )));
    }
    let asm = ckpt.restore(&prepared.dataset.q_matrix)?;
    let preds = asm.predict(&prepared.split.test)?;
    let labels: Vec<bool> = prepared.split.test.iter().map(|it| it.correct).collect();
    let mut report = MetricsReport::compute(&preds, &labels, rc.train.seed, &hash)?;
    report.mastery_recovery = recovery(&asm, &prepared);
    report.append_to(a.run.join(REPORTS_FILE))?;
    println!("test {}", report.to_line());
    Ok(())
}
