use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::AdamConfig;
use crate::models::ArchConfig;
use crate::mpnn::{Centering, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Joint training of F and G on paired and unpaired data.
    Complementary,
    /// F alone on the paired data.
    Supervised,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complementary" => Ok(Mode::Complementary),
            "supervised" => Ok(Mode::Supervised),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (complementary, supervised)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Complementary => "complementary",
            Mode::Supervised => "supervised",
        })
    }
}

/// Everything that determines a training run, given the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub mpnn: LayerKind,
    pub node_centering: bool,
    pub message_centering: bool,
    pub hidden: usize,
    pub lr_layers: usize,
    pub hr_layers: usize,
    pub k: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Share of the paired samples held out for early stopping (at least two
    /// when positive). Zero disables the hold-out and monitors RMSE on the
    /// paired training samples instead.
    pub val_fraction: f64,
    /// Per-column weights of the MSE loss; `None` means uniform.
    pub loss_weights: Option<Vec<f64>>,
    /// Optimizer steps per epoch. `None` uses the number of training samples
    /// the mode draws from.
    pub steps_per_epoch: Option<usize>,
    /// Probe the loss landscape once per epoch with this step multiplier.
    pub probe_multiplier: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            mode: Mode::Complementary,
            mpnn: LayerKind::Mgn,
            node_centering: true,
            message_centering: true,
            hidden: 30,
            lr_layers: 3,
            hr_layers: 3,
            k: 3,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            epochs: 1000,
            patience: 50,
            val_fraction: 0.1,
            loss_weights: None,
            steps_per_epoch: None,
            probe_multiplier: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn centering(&self) -> Centering {
        Centering {
            node: self.node_centering,
            message: self.message_centering,
        }
    }

    pub fn set_centering(&mut self, c: Centering) {
        self.node_centering = c.node;
        self.message_centering = c.message;
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn arch(&self, field_dim: usize, space_dim: usize) -> ArchConfig {
        ArchConfig {
            kind: self.mpnn,
            centering: self.centering(),
            hidden: self.hidden,
            lr_layers: self.lr_layers,
            hr_layers: self.hr_layers,
            k: self.k,
            field_dim,
            space_dim,
        }
    }

    /// Number of held-out validation pairs for `n_paired` paired samples.
    pub fn n_validation(&self, n_paired: usize) -> usize {
        if self.val_fraction <= 0.0 {
            0
        } else {
            ((self.val_fraction * n_paired as f64).round() as usize).max(2)
        }
    }

    /// Checks the configuration against a dataset with `n_paired` pairs and
    /// `d` solution columns.
    pub fn validate(&self, n_paired: usize, d: usize) -> Result<()> {
        self.arch(d, 2).validate()?;
        let positive = |v: f64, name: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.lr, "lr")?;
        positive(self.eps, "eps")?;
        for (b, name) in [(self.beta1, "beta1"), (self.beta2, "beta2")] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if let Some(w) = &self.loss_weights {
            if w.len() != d || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!(
                    "loss_weights needs {d} finite non-negative entries, got {w:?}"
                )));
            }
        }
        if let Some(m) = self.probe_multiplier {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::Config(format!(
                    "probe_multiplier must be non-negative, got {m}"
                )));
            }
        }
        let train = n_paired.saturating_sub(self.n_validation(n_paired));
        if train < 2 {
            return Err(Error::Validation(format!(
                "{n_paired} paired samples leave {train} for training after validation; need at least 2"
            )));
        }
        Ok(())
    }
}
