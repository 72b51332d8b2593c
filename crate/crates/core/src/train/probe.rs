use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::losses::{LossContext, LossVars};
use super::run::{Draw, Sampler};
use crate::error::Result;
use crate::grad::{Bound, Tape, Tensor};
use crate::models::{MeshBank, ModelParams};

/// Multiplier of the learning rate used for the probe step by default.
pub const DEFAULT_PROBE_MULTIPLIER: f64 = 4.0;

/// Loss before and after one gradient step of size `multiplier · η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub step: usize,
    pub loss: f64,
    pub perturbed_loss: f64,
}

impl ProbePoint {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.perturbed_loss.is_finite()
    }
}

/// Evaluates `loss_grad` at `params`, moves to `params − scale · grad`,
/// evaluates `loss` there, and restores `params` exactly.
pub fn probe_step(
    params: &mut [Tensor],
    scale: f64,
    loss_grad: impl FnOnce(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
    loss: impl FnOnce(&[Tensor]) -> Result<f64>,
) -> Result<(f64, f64)> {
    let (l0, grads) = loss_grad(params)?;
    let saved: Vec<Tensor> = params.to_vec();
    for (p, g) in params.iter_mut().zip(&grads) {
        for (v, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= scale * gv;
        }
    }
    let l1 = loss(params);
    params.clone_from_slice(&saved);
    Ok((l0, l1?))
}

fn draw_loss(ctx: &LossContext, tape: &mut Tape, p: &Bound, draw: &Draw) -> Result<LossVars> {
    match draw {
        Draw::Triple(a, b, c) => ctx.complementary(tape, p, a, b, c.as_ref()),
        Draw::Single(pair) => ctx.supervised(tape, p, pair),
    }
}

/// Probes the training loss at `points` freshly drawn samples.
///
/// Non-finite losses are recorded as they are; the probe carries on.
pub fn probe_loss_landscape(
    model: &ModelParams,
    bank: &MeshBank,
    sampler: &mut Sampler,
    weights: Option<Rc<[f64]>>,
    points: usize,
    scale: f64,
) -> Result<Vec<ProbePoint>> {
    let eval = |values: &[Tensor], draw: &Draw, grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut at = model.clone();
        at.store.values_mut().clone_from_slice(values);
        let ctx = LossContext {
            model: &at,
            bank,
            weights: weights.clone(),
        };
        let mut tape = Tape::new();
        let p = if grad {
            at.bind(&mut tape)
        } else {
            at.bind_frozen(&mut tape)
        };
        let vars = draw_loss(&ctx, &mut tape, &p, draw)?;
        let loss = tape.value(vars.total).item();
        if !grad {
            return Ok((loss, Vec::new()));
        }
        let mut g = tape.backward(vars.total)?;
        Ok((loss, p.gradients(&mut g)))
    };
    let mut values = model.store.values().to_vec();
    let mut out = Vec::with_capacity(points);
    for step in 0..points {
        let draw = sampler.draw();
        let (loss, perturbed_loss) = probe_step(
            &mut values,
            scale,
            |v| eval(v, &draw, true),
            |v| eval(v, &draw, false).map(|r| r.0),
        )?;
        out.push(ProbePoint {
            step,
            loss,
            perturbed_loss,
        });
    }
    Ok(out)
}
