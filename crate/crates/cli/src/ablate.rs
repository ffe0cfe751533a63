use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cmes_core::train::{RunOptions, Strategy, TrainConfig};
use cmes_core::Error;

use crate::commands::run_training;
use crate::{AblateArgs, Cli, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GridKey {
    N,
    Clusters,
    Balance,
    TrainFrac,
}

impl GridKey {
    fn name(self) -> &'static str {
        match self {
            GridKey::N => "n",
            GridKey::Clusters => "clusters",
            GridKey::Balance => "balance",
            GridKey::TrainFrac => "train-frac",
        }
    }

    fn apply(self, c: &mut TrainConfig, value: f64) {
        match self {
            GridKey::N => c.n = value as usize,
            GridKey::Clusters => c.clusters = value as usize,
            GridKey::Balance => c.balance = value,
            GridKey::TrainFrac => c.train_frac = value,
        }
    }
}

fn parse_grid(spec: &str) -> Result<(GridKey, Vec<f64>), CliError> {
    let bad = |m: String| CliError::Core(Error::Config(m));
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| bad(format!("grid `{spec}` must look like key=v1,v2")))?;
    let key = match key.trim() {
        "n" => GridKey::N,
        "clusters" => GridKey::Clusters,
        "balance" => GridKey::Balance,
        "train-frac" | "train_frac" => GridKey::TrainFrac,
        other => return Err(bad(format!("unknown grid key `{other}`"))),
    };
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("grid value `{v}`: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(bad("empty grid".into()));
    }
    if matches!(key, GridKey::N | GridKey::Clusters) && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(bad(format!("{} takes non-negative integers", key.name())));
    }
    Ok((key, values))
}

#[derive(Clone, Debug)]
struct Job {
    strategy: Strategy,
    grid_value: Option<f64>,
    seed: u64,
    config: TrainConfig,
    dir: PathBuf,
}

#[derive(Clone, Debug)]
struct JobResult {
    acc: f64,
    rmse: f64,
    auc: f64,
    best_epoch: usize,
    epochs_run: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn grid_label(key: Option<GridKey>, value: Option<f64>) -> String {
    match (key, value) {
        (Some(k), Some(v)) => format!("{}={v}", k.name()),
        _ => "-".into(),
    }
}

pub fn run(cli: &Cli, a: &AblateArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()).into());
    }
    let source = a.data.source()?;
    let mut flags = a.flags.clone();
    flags.strategy = Some(Strategy::Cmes);
    let base = flags.resolve(TrainConfig::default());
    let grid = a.grid.as_deref().map(parse_grid).transpose()?;
    let root = a.out.clone().unwrap_or_else(|| {
        cli.out_root
            .join(format!("ablate-{}-s{}", base.model, base.seed))
    });
    std::fs::create_dir_all(&root)?;

    let values: Vec<Option<f64>> = match &grid {
        Some((_, v)) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut jobs = Vec::new();
    for &value in &values {
        for &strategy in &a.strategies {
            for k in 0..a.seeds as u64 {
                let mut config = TrainConfig {
                    strategy,
                    seed: base.seed + k,
                    ..base.clone()
                };
                if let (Some((key, _)), Some(v)) = (&grid, value) {
                    key.apply(&mut config, v);
                }
                let mut name = format!("{strategy}");
                if let (Some((key, _)), Some(v)) = (&grid, value) {
                    write!(name, "-{}{v}", key.name()).expect("write to string");
                }
                write!(name, "-s{}", config.seed).expect("write to string");
                jobs.push(Job {
                    strategy,
                    grid_value: value,
                    seed: config.seed,
                    config,
                    dir: root.join(name),
                });
            }
        }
    }
    println!("{} runs under {}", jobs.len(), root.display());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<JobResult, String>>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = a.jobs.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run_training(
                    "ablate",
                    source.clone(),
                    a.data.min_logs,
                    job.config.clone(),
                    Some(job.dir.clone()),
                    &cli.out_root,
                    a.force,
                    RunOptions::default(),
                )
                .map(|(_, _, o)| JobResult {
                    acc: o.test.acc,
                    rmse: o.test.rmse,
                    auc: o.test.auc,
                    best_epoch: o.best_epoch,
                    epochs_run: o.epochs_run,
                })
                .map_err(|e| e.to_string());
                if let Ok(r) = &r {
                    eprintln!("{} seed {}: test auc {:.4}", job.strategy, job.seed, r.auc);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let results: Vec<JobResult> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .zip(&jobs)
        .map(|(r, job)| match r.expect("every job ran") {
            Ok(r) => Ok(r),
            Err(e) => Err(CliError::Core(Error::Config(format!("run {}: {e}", job.dir.display())))),
        })
        .collect::<Result<_, _>>()?;

    let key = grid.as_ref().map(|(k, _)| *k);
    let mut runs = String::from("strategy,grid,seed,acc,rmse,auc,best_epoch,epochs_run\n");
    for (job, r) in jobs.iter().zip(&results) {
        writeln!(
            runs,
            "{},{},{},{},{},{},{},{}",
            job.strategy,
            grid_label(key, job.grid_value),
            job.seed,
            r.acc,
            r.rmse,
            r.auc,
            r.best_epoch,
            r.epochs_run
        )
        .expect("write to string");
    }
    std::fs::write(root.join("runs.csv"), runs)?;

    let mut table: BTreeMap<(String, Strategy), Vec<&JobResult>> = BTreeMap::new();
    for (job, r) in jobs.iter().zip(&results) {
        table
            .entry((grid_label(key, job.grid_value), job.strategy))
            .or_default()
            .push(r);
    }
    let mut summary = String::from("grid,strategy,runs,auc_median,auc_min,auc_max,acc_median,rmse_median\n");
    let mut medians: BTreeMap<(String, Strategy), f64> = BTreeMap::new();
    for ((g, s), rs) in &table {
        let mut auc: Vec<f64> = rs.iter().map(|r| r.auc).collect();
        let mut acc: Vec<f64> = rs.iter().map(|r| r.acc).collect();
        let mut rmse: Vec<f64> = rs.iter().map(|r| r.rmse).collect();
        let (lo, hi) = (
            auc.iter().copied().fold(f64::INFINITY, f64::min),
            auc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        let m = median(&mut auc);
        medians.insert((g.clone(), *s), m);
        writeln!(
            summary,
            "{g},{s},{},{m:.4},{lo:.4},{hi:.4},{:.4},{:.4}",
            rs.len(),
            median(&mut acc),
            median(&mut rmse)
        )
        .expect("write to string");
    }
    std::fs::write(root.join("summary.csv"), &summary)?;
    print!("{summary}");
    for &value in &values {
        let g = grid_label(key, value);
        if let Some(cmes) = medians.get(&(g.clone(), Strategy::Cmes)) {
            for other in [Strategy::Original, Strategy::Rss] {
                if let Some(o) = medians.get(&(g.clone(), other)) {
                    println!("{g}: median auc cmes - {other} = {:+.4}", cmes - o);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let (k, v) = parse_grid("n=5,10,20").unwrap();
        assert_eq!(k, GridKey::N);
        assert_eq!(v, vec![5.0, 10.0, 20.0]);
        assert!(parse_grid("n=2.5").is_err());
        assert!(parse_grid("lr=0.1").is_err());
        assert!(parse_grid("n").is_err());
        assert_eq!(parse_grid("train-frac=0.5").unwrap().0, GridKey::TrainFrac);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
