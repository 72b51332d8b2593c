use std::fs;
use std::path::{Path, PathBuf};

use meshsr_core::datagen::{
    gen_jitter_dataset, gen_poisson_dataset, paired_lr_embeddings, random_subset_mmds,
    select_hr_mmd, JitterSpec, KernelPool, PoissonSpec,
};
use meshsr_core::meshcore::{load_dataset, save_dataset, SplitDataset};
use meshsr_core::models::{load_checkpoint, save_checkpoint, MeshBank, ModelParams};
use meshsr_core::train::{
    evaluate, metrics_csv, probe_csv, probe_loss_landscape, run_training, timing_csv, write_text,
    EpochMetrics, Observer, Sampler, TrainConfig,
};
use meshsr_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::{create_dir, dataset_fingerprint, now, write_json, RunManifest};
use crate::{
    CliError, DataKind, EvalArgs, EvalSplit, GenDataArgs, ProbeArgs, SelectArgs, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.msr";
pub const DIVERGENCE_FILE: &str = "divergence_state.msr";
pub const SUMMARY_FILE: &str = "summary.json";
/// Sampler stream used by `probe-landscape`, distinct from the training streams.
const PROBE_STREAM: u64 = 7;
const RANDOM_SUBSET_DRAWS: usize = 20;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let started = now();
    let (ds, spec) = match args.kind {
        DataKind::Poisson => {
            let spec: PoissonSpec = match &args.spec {
                Some(p) => read_json(p)?,
                None => PoissonSpec::default(),
            };
            (
                gen_poisson_dataset(&spec, args.n, args.nh, args.n_test, args.seed)?,
                to_value(&spec),
            )
        }
        DataKind::Jitter => {
            let spec: JitterSpec = match &args.spec {
                Some(p) => read_json(p)?,
                None => JitterSpec::default(),
            };
            (
                gen_jitter_dataset(&spec, args.n, args.nh, args.n_test, args.seed)?,
                to_value(&spec),
            )
        }
    };
    save_dataset(&ds, &args.out)?;
    let (n, n_h) = ds.counts();
    println!(
        "wrote {}: N = {n}, N_h = {n_h}, unpaired = {}, test = {}",
        args.out.display(),
        ds.unpaired.len(),
        ds.test.len()
    );
    if let Some(r) = ds.provenance.get("max_residual") {
        println!(
            "solver: max residual {r}, max iterations {}",
            ds.provenance["max_iterations"]
        );
    }
    RunManifest {
        command: "gen-data".into(),
        config: serde_json::json!({
            "kind": format!("{:?}", args.kind).to_lowercase(),
            "n": args.n,
            "n_h": args.nh,
            "n_test": args.n_test,
            "spec": spec,
        }),
        seed: args.seed,
        dataset_sha256: dataset_fingerprint(&args.out)?,
        started_unix: started,
        finished_unix: 0.0,
        artifacts: vec![args.out.clone()],
    }
    .write(&args.out)
}

/// Indices written by `select-hr` and read back by `train --hr-subset`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    #[serde(default)]
    pub mmd: Option<f64>,
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut c: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.mode {
        c.mode = v;
    }
    if let Some(v) = args.mpnn {
        c.mpnn = v;
    }
    if let Some(v) = args.centering {
        c.set_centering(v);
    }
    if let Some(v) = args.hidden {
        c.hidden = v;
    }
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.patience {
        c.patience = v;
    }
    if let Some(v) = args.lr {
        c.lr = v;
    }
    if let Some(v) = args.steps_per_epoch {
        c.steps_per_epoch = Some(v);
    }
    if let Some(v) = args.probe_multiplier {
        c.probe_multiplier = Some(v);
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    Ok(c)
}

/// Prints progress and keeps the last finite state if training blows up.
struct CliObserver {
    dump: PathBuf,
    stats: meshsr_core::meshcore::NormStats,
    dumped: Option<Result<PathBuf, String>>,
}

impl Observer for CliObserver {
    fn on_epoch(&mut self, m: &EpochMetrics, seconds: f64) -> meshsr_core::Result<()> {
        eprintln!(
            "epoch {:>4}  L_F {:.4e} (+{:.4e})  L_G {:.4e} (+{:.4e})  val RMSE {:.5}  {seconds:.1}s",
            m.epoch, m.l_f_sup, m.l_f_unsup, m.l_g_sup, m.l_g_unsup, m.val_rmse
        );
        Ok(())
    }

    fn on_divergence(&mut self, params: &ModelParams, _error: &Error) {
        self.dumped = Some(
            save_checkpoint(&self.dump, params, &self.stats)
                .map(|()| self.dump.clone())
                .map_err(|e| e.to_string()),
        );
    }
}

fn load_training_data(args: &TrainArgs) -> Result<SplitDataset, CliError> {
    let ds = load_dataset(&args.data)?;
    match &args.hr_subset {
        None => Ok(ds),
        Some(path) => {
            let sel: Selection = read_json(path)?;
            Ok(ds.restrict_paired(&sel.indices)?)
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let started = now();
    let config = train_config(args)?;
    let fingerprint = dataset_fingerprint(&args.data)?;
    let ds = load_training_data(args)?;
    config.validate(ds.paired.len(), ds.field_dim())?;
    create_dir(&args.out)?;

    let mut observer = CliObserver {
        dump: args.out.join(DIVERGENCE_FILE),
        stats: ds.stats.clone(),
        dumped: None,
    };
    let result = match run_training(&config, &ds, &mut observer) {
        Ok(r) => r,
        Err(e @ Error::Divergence { .. }) => {
            let mut err = CliError::from(e);
            match observer.dumped {
                Some(Ok(path)) => {
                    err.message += &format!("; last finite state saved to {}", path.display())
                }
                Some(Err(why)) => err.message += &format!("; saving the state failed: {why}"),
                None => {}
            }
            return Err(err);
        }
        Err(e) => return Err(e.into()),
    };

    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &result.params, &ds.stats)?;
    let metrics = args.out.join("metrics.csv");
    write_text(&metrics, &metrics_csv(&result.metrics))?;
    let timing = args.out.join("timing.csv");
    write_text(&timing, &timing_csv(&result.seconds))?;
    let mut artifacts = vec![ckpt, metrics, timing];
    if !result.metrics.probes.is_empty() {
        let p = args.out.join("probe.csv");
        write_text(&p, &probe_csv(&result.metrics.probes))?;
        artifacts.push(p);
    }
    let m = &result.metrics;
    let summary = serde_json::json!({
        "mode": config.mode.to_string(),
        "seed": config.seed,
        "test_rmse": m.test_rmse,
        "baseline_test_rmse": m.baseline_test_rmse,
        "best_epoch": m.best_epoch,
        "best_val_rmse": m.best_val_rmse,
        "epochs_run": m.epochs.len(),
        "steps": m.steps,
        "seconds": result.seconds.iter().sum::<f64>(),
        "config": config,
    });
    let summary_path = args.out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    artifacts.push(summary_path);
    match (m.test_rmse, m.baseline_test_rmse) {
        (Some(t), Some(b)) => println!(
            "test RMSE {t:.6} (kNN baseline {b:.6}), best epoch {}",
            m.best_epoch
        ),
        _ => println!(
            "best validation RMSE {:.6} at epoch {}",
            m.best_val_rmse, m.best_epoch
        ),
    }
    RunManifest {
        command: "train".into(),
        config: serde_json::json!({
            "train": config,
            "data": args.data,
            "hr_subset": args.hr_subset,
        }),
        seed: config.seed,
        dataset_sha256: fingerprint,
        started_unix: started,
        finished_unix: 0.0,
        artifacts,
    }
    .write(&args.out)
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let arch = ckpt.params.arch();
    if arch.space_dim != ds.space_dim() || arch.field_dim != ds.field_dim() {
        return Err(CliError::config(format!(
            "checkpoint expects {}-D meshes with {} field columns, dataset has {}-D meshes with {}",
            arch.space_dim,
            arch.field_dim,
            ds.space_dim(),
            ds.field_dim()
        )));
    }
    let pairs = match args.split {
        EvalSplit::Test => &ds.test,
        EvalSplit::Paired => &ds.paired,
    };
    let bank = MeshBank::new(ds.meshes.clone(), ckpt.stats.clone());
    let report = evaluate(&ckpt.params, &bank, pairs)?;
    println!(
        "RMSE {:.6}  kNN baseline {:.6}  over {} samples",
        report.rmse, report.baseline_rmse, report.samples
    );
    for (c, (r, b)) in report
        .per_column
        .iter()
        .zip(&report.baseline_per_column)
        .enumerate()
    {
        println!("  column {c}: {r:.6} (baseline {b:.6})");
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn select_hr(args: &SelectArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.data)?;
    let points = paired_lr_embeddings(&ds)?;
    let sel = select_hr_mmd(&points, args.nh, args.bandwidth, args.seed)?;
    let pool = KernelPool::new(&points, sel.bandwidth);
    let mut random = random_subset_mmds(&pool, args.nh, RANDOM_SUBSET_DRAWS, args.seed)?;
    random.sort_by(f64::total_cmp);
    let median = 0.5 * (random[(RANDOM_SUBSET_DRAWS - 1) / 2] + random[RANDOM_SUBSET_DRAWS / 2]);
    println!(
        "selected {} of {} paired samples: MMD {:.6} (median of {RANDOM_SUBSET_DRAWS} random subsets {:.6})",
        args.nh,
        points.len(),
        sel.mmd,
        median
    );
    write_json(
        &args.out,
        &serde_json::json!({
            "indices": sel.indices,
            "mmd": sel.mmd,
            "trace": sel.trace,
            "bandwidth": sel.bandwidth,
            "random_median_mmd": median,
            "pool_size": points.len(),
            "seed": args.seed,
            "dataset_sha256": dataset_fingerprint(&args.data)?,
        }),
    )
}

pub fn probe(args: &ProbeArgs) -> Result<(), CliError> {
    let started = now();
    if !(args.multiplier.is_finite() && args.multiplier >= 0.0) {
        return Err(CliError::config(format!(
            "multiplier must be non-negative, got {}",
            args.multiplier
        )));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let bank = MeshBank::new(ds.meshes.clone(), ckpt.stats.clone());
    let mut sampler = Sampler::seeded(
        args.mode,
        ds.paired.clone(),
        ds.unpaired.clone(),
        args.seed,
        PROBE_STREAM,
    )?;
    let points = probe_loss_landscape(
        &ckpt.params,
        &bank,
        &mut sampler,
        None,
        args.points,
        args.multiplier * args.lr,
    )?;
    create_dir(&args.out)?;
    let csv = args.out.join("probe.csv");
    write_text(&csv, &probe_csv(&points))?;
    let bad = points.iter().filter(|p| !p.is_finite()).count();
    println!(
        "{} probe points written to {} ({bad} non-finite)",
        points.len(),
        csv.display()
    );
    RunManifest {
        command: "probe-landscape".into(),
        config: serde_json::json!({
            "checkpoint": args.checkpoint,
            "data": args.data,
            "mode": args.mode.to_string(),
            "points": args.points,
            "multiplier": args.multiplier,
            "lr": args.lr,
        }),
        seed: args.seed,
        dataset_sha256: dataset_fingerprint(&args.data)?,
        started_unix: started,
        finished_unix: 0.0,
        artifacts: vec![csv],
    }
    .write(&args.out)
}
