use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::probe::ProbePoint;
use super::run::RunMetrics;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,l_f_sup,l_f_unsup,l_g_sup,l_g_unsup,val_rmse";

/// Per-epoch losses and monitored RMSE as CSV. Floats use the shortest
/// representation that round-trips, so equal runs give equal bytes.
pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in &metrics.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.epoch, m.l_f_sup, m.l_f_unsup, m.l_g_sup, m.l_g_unsup, m.val_rmse
        )
        .expect("writing to a String");
    }
    out
}

pub fn timing_csv(seconds: &[f64]) -> String {
    let mut out = String::from("epoch,seconds\n");
    for (i, s) in seconds.iter().enumerate() {
        writeln!(out, "{},{s:.6}", i + 1).expect("writing to a String");
    }
    out
}

pub fn probe_csv(points: &[ProbePoint]) -> String {
    let mut out = String::from("step,loss,perturbed_loss\n");
    for p in points {
        writeln!(out, "{},{},{}", p.step, p.loss, p.perturbed_loss).expect("writing to a String");
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
