use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::eval::{baseline_rmse, evaluate_rmse};
use super::losses::{step_complementary, step_supervised, LossBreakdown};
use super::probe::{probe_loss_landscape, ProbePoint};
use crate::error::{Error, Result};
use crate::grad::{AdamState, ParamStore};
use crate::meshcore::{Pair, SplitDataset, Unpaired};
use crate::models::{MeshBank, ModelParams};

/// Paired data split into training and early-stopping validation sets.
#[derive(Debug, Clone)]
pub struct TrainingSplit {
    pub train: Vec<Pair>,
    pub validation: Vec<Pair>,
    pub unpaired: Vec<Unpaired>,
}

impl TrainingSplit {
    /// Holds out `config.n_validation` pairs chosen by `rng`; the remaining
    /// pairs keep their dataset order.
    pub fn new(ds: &SplitDataset, config: &TrainConfig, rng: &mut impl Rng) -> Self {
        let n = ds.paired.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut held = vec![false; n];
        for &i in &order[..config.n_validation(n)] {
            held[i] = true;
        }
        let validation = order[..config.n_validation(n)]
            .iter()
            .map(|&i| ds.paired[i].clone())
            .collect();
        let train = ds
            .paired
            .iter()
            .zip(&held)
            .filter(|(_, &h)| !h)
            .map(|(p, _)| p.clone())
            .collect();
        TrainingSplit {
            train,
            validation,
            unpaired: ds.unpaired.clone(),
        }
    }

    /// Pairs that drive early stopping: the hold-out, or the training pairs
    /// when nothing was held out.
    pub fn monitor(&self) -> &[Pair] {
        if self.validation.is_empty() {
            &self.train
        } else {
            &self.validation
        }
    }
}

/// Samples for one optimizer step.
#[derive(Debug, Clone)]
pub enum Draw {
    /// Two distinct pairs and, when the pool is not empty, an unpaired sample.
    Triple(Pair, Pair, Option<Unpaired>),
    Single(Pair),
}

/// Seeded source of training draws.
#[derive(Debug, Clone)]
pub struct Sampler {
    mode: Mode,
    paired: Vec<Pair>,
    unpaired: Vec<Unpaired>,
    queue: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(
        mode: Mode,
        paired: Vec<Pair>,
        unpaired: Vec<Unpaired>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if paired.len() < 2 {
            return Err(Error::Validation(format!(
                "sampling needs at least 2 paired samples, got {}",
                paired.len()
            )));
        }
        Ok(Sampler {
            mode,
            paired,
            unpaired,
            queue: Vec::new(),
            rng,
        })
    }

    /// Sampler driven by stream `stream` of a generator seeded with `seed`.
    pub fn seeded(
        mode: Mode,
        paired: Vec<Pair>,
        unpaired: Vec<Unpaired>,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        Sampler::new(mode, paired, unpaired, sampler_rng(seed, stream))
    }

    /// Complementary mode: α and β uniformly without replacement, γ uniformly
    /// from the unpaired pool. Supervised mode: pairs in reshuffled passes.
    pub fn draw(&mut self) -> Draw {
        match self.mode {
            Mode::Complementary => {
                let n = self.paired.len();
                let a = self.rng.random_range(0..n);
                let mut b = self.rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                let c = if self.unpaired.is_empty() {
                    None
                } else {
                    Some(self.unpaired[self.rng.random_range(0..self.unpaired.len())].clone())
                };
                Draw::Triple(self.paired[a].clone(), self.paired[b].clone(), c)
            }
            Mode::Supervised => {
                if self.queue.is_empty() {
                    self.queue = (0..self.paired.len()).collect();
                    self.queue.shuffle(&mut self.rng);
                }
                let i = self.queue.pop().expect("refilled above");
                Draw::Single(self.paired[i].clone())
            }
        }
    }
}

/// Mean losses over one epoch and the monitored RMSE at its end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_f_sup: f64,
    pub l_f_unsup: f64,
    pub l_g_sup: f64,
    pub l_g_unsup: f64,
    pub val_rmse: f64,
}

/// Everything a run records except wall-clock time, so equal seeds give
/// equal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub probes: Vec<ProbePoint>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub steps: usize,
    pub test_rmse: Option<f64>,
    pub baseline_test_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters from the epoch with the lowest monitored RMSE.
    pub params: ModelParams,
    pub metrics: RunMetrics,
    /// Wall-clock seconds per epoch.
    pub seconds: Vec<f64>,
}

/// Hooks into a running training loop.
pub trait Observer {
    fn on_epoch(&mut self, _metrics: &EpochMetrics, _seconds: f64) -> Result<()> {
        Ok(())
    }

    /// Called with the last parameters that produced finite losses.
    fn on_divergence(&mut self, _params: &ModelParams, _error: &Error) {}
}

impl Observer for () {}

fn sampler_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains F (and G in complementary mode) on `ds` and returns the best
/// parameters by monitored RMSE.
pub fn run_training(
    config: &TrainConfig,
    ds: &SplitDataset,
    observer: &mut dyn Observer,
) -> Result<TrainResult> {
    ds.validate()?;
    let d = ds.field_dim();
    config.validate(ds.paired.len(), d)?;
    let arch = config.arch(d, ds.space_dim());
    let bank = MeshBank::new(ds.meshes.clone(), ds.stats.clone());
    let mut model = ModelParams::new(arch, config.seed)?;
    let mut adam = AdamState::new(config.adam(), model.store.values());
    let weights: Option<Rc<[f64]>> = config
        .loss_weights
        .as_ref()
        .map(|w| w.iter().copied().collect());

    let split = TrainingSplit::new(ds, config, &mut sampler_rng(config.seed, 1));
    let mut sampler = Sampler::new(
        config.mode,
        split.train.clone(),
        split.unpaired.clone(),
        sampler_rng(config.seed, 2),
    )?;
    let mut probe_sampler = Sampler::new(
        config.mode,
        split.train.clone(),
        split.unpaired.clone(),
        sampler_rng(config.seed, 3),
    )?;
    let steps = config.steps_per_epoch.unwrap_or(match config.mode {
        Mode::Complementary => split.train.len() + split.unpaired.len(),
        Mode::Supervised => split.train.len(),
    });

    let mut epochs = Vec::new();
    let mut probes = Vec::new();
    let mut seconds = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0usize;
    let mut total_steps = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut sum = LossBreakdown::default();
        for step in 0..steps {
            let outcome = match sampler.draw() {
                Draw::Triple(a, b, c) => step_complementary(
                    &mut model,
                    &mut adam,
                    &bank,
                    weights.clone(),
                    (&a, &b, c.as_ref()),
                ),
                Draw::Single(pair) => {
                    step_supervised(&mut model, &mut adam, &bank, weights.clone(), &pair)
                }
            };
            let losses = match outcome {
                Ok(l) => l,
                Err(Error::Divergence { message, .. }) => {
                    let err = Error::Divergence {
                        epoch,
                        step,
                        message,
                    };
                    observer.on_divergence(&model, &err);
                    return Err(err);
                }
                Err(e) => return Err(e),
            };
            sum.l_f_sup += losses.l_f_sup;
            sum.l_f_unsup += losses.l_f_unsup;
            sum.l_g_sup += losses.l_g_sup;
            sum.l_g_unsup += losses.l_g_unsup;
            total_steps += 1;
        }
        let val_rmse = evaluate_rmse(&model, &bank, split.monitor())?;
        if !val_rmse.is_finite() {
            let err = Error::Divergence {
                epoch,
                step: steps,
                message: format!("validation RMSE = {val_rmse}"),
            };
            observer.on_divergence(&model, &err);
            return Err(err);
        }
        let n = steps as f64;
        let m = EpochMetrics {
            epoch,
            l_f_sup: sum.l_f_sup / n,
            l_f_unsup: sum.l_f_unsup / n,
            l_g_sup: sum.l_g_sup / n,
            l_g_unsup: sum.l_g_unsup / n,
            val_rmse,
        };
        if let Some(mult) = config.probe_multiplier {
            let mut point = probe_loss_landscape(
                &model,
                &bank,
                &mut probe_sampler,
                weights.clone(),
                1,
                mult * config.lr,
            )?;
            for p in &mut point {
                p.step = epoch;
            }
            probes.extend(point);
        }
        epochs.push(m);
        let elapsed = started.elapsed().as_secs_f64();
        seconds.push(elapsed);
        observer.on_epoch(&m, elapsed)?;

        if best.as_ref().is_none_or(|b| val_rmse < b.1) {
            best = Some((epoch, val_rmse, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }

    let (best_epoch, best_val_rmse, store) = best.expect("at least one epoch ran");
    model.store = store;
    let (test_rmse, baseline_test_rmse) = if ds.test.is_empty() {
        (None, None)
    } else {
        (
            Some(evaluate_rmse(&model, &bank, &ds.test)?),
            Some(baseline_rmse(&bank, &ds.test, model.k())?),
        )
    };
    Ok(TrainResult {
        params: model,
        metrics: RunMetrics {
            epochs,
            probes,
            best_epoch,
            best_val_rmse,
            steps: total_steps,
            test_rmse,
            baseline_test_rmse,
        },
        seconds,
    })
}
