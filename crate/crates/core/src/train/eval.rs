use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::meshcore::Pair;
use crate::models::{knn_baseline, MeshBank, ModelParams};

/// Running sum of squared errors per column.
#[derive(Debug, Clone)]
struct SquaredError {
    sums: Vec<f64>,
    rows: usize,
}

impl SquaredError {
    fn new(cols: usize) -> Self {
        SquaredError {
            sums: vec![0.0; cols],
            rows: 0,
        }
    }

    fn add(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        if pred.shape() != truth.shape() || pred.cols() != self.sums.len() {
            return Err(Error::dim(
                "rmse",
                format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
            ));
        }
        let c = self.sums.len();
        for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
            self.sums[i % c] += (p - t) * (p - t);
        }
        self.rows += pred.rows();
        Ok(())
    }

    fn overall(&self) -> f64 {
        let n = (self.rows * self.sums.len()) as f64;
        (self.sums.iter().sum::<f64>() / n).sqrt()
    }

    fn per_column(&self) -> Vec<f64> {
        self.sums
            .iter()
            .map(|s| (s / self.rows as f64).sqrt())
            .collect()
    }
}

/// RMSE of F and of plain kNN upsampling, in normalized field units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rmse: f64,
    pub per_column: Vec<f64>,
    pub baseline_rmse: f64,
    pub baseline_per_column: Vec<f64>,
    pub samples: usize,
}

fn check_nonempty(pairs: &[Pair]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::Contract("RMSE over an empty set of pairs".into()))
    } else {
        Ok(())
    }
}

/// Root mean squared error of F over every sample, node and column.
pub fn evaluate_rmse(model: &ModelParams, bank: &MeshBank, pairs: &[Pair]) -> Result<f64> {
    check_nonempty(pairs)?;
    let mut acc = SquaredError::new(bank.stats().field.cols());
    for pair in pairs {
        let pred = model.predict(bank, &pair.lr, pair.hr.mesh_id)?;
        acc.add(&pred, &bank.field(&pair.hr)?)?;
    }
    Ok(acc.overall())
}

/// Overall and per-column RMSE of F next to the kNN baseline.
pub fn evaluate(model: &ModelParams, bank: &MeshBank, pairs: &[Pair]) -> Result<RmseReport> {
    check_nonempty(pairs)?;
    let d = bank.stats().field.cols();
    let mut model_err = SquaredError::new(d);
    let mut base_err = SquaredError::new(d);
    for pair in pairs {
        let truth = bank.field(&pair.hr)?;
        let pred = model.predict(bank, &pair.lr, pair.hr.mesh_id)?;
        model_err.add(&pred, &truth)?;
        let base = knn_baseline(bank, &pair.lr, pair.hr.mesh_id, model.k())?;
        base_err.add(&base, &truth)?;
    }
    Ok(RmseReport {
        rmse: model_err.overall(),
        per_column: model_err.per_column(),
        baseline_rmse: base_err.overall(),
        baseline_per_column: base_err.per_column(),
        samples: pairs.len(),
    })
}

/// RMSE of plain kNN upsampling with `k` neighbours.
pub fn baseline_rmse(bank: &MeshBank, pairs: &[Pair], k: usize) -> Result<f64> {
    check_nonempty(pairs)?;
    let mut acc = SquaredError::new(bank.stats().field.cols());
    for pair in pairs {
        let base = knn_baseline(bank, &pair.lr, pair.hr.mesh_id, k)?;
        acc.add(&base, &bank.field(&pair.hr)?)?;
    }
    Ok(acc.overall())
}
