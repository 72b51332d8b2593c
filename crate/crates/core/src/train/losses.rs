use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{AdamState, Bound, Tape, Var};
use crate::meshcore::{Pair, Unpaired};
use crate::models::{project, target_g, MeshBank, ModelParams};

/// Loss threshold beyond which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// The four loss components of one step. Unsupervised terms are zero when
/// the step had no unpaired sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_f_sup: f64,
    pub l_f_unsup: f64,
    pub l_g_sup: f64,
    pub l_g_unsup: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn l_f(&self) -> f64 {
        self.l_f_sup + self.l_f_unsup
    }

    pub fn l_g(&self) -> f64 {
        self.l_g_sup + self.l_g_unsup
    }

    /// Error unless every component is finite and below [`DIVERGENCE_LIMIT`].
    pub fn check(&self) -> Result<()> {
        let parts = [
            ("l_f_sup", self.l_f_sup),
            ("l_f_unsup", self.l_f_unsup),
            ("l_g_sup", self.l_g_sup),
            ("l_g_unsup", self.l_g_unsup),
            ("total", self.total),
        ];
        for (name, v) in parts {
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    epoch: 0,
                    step: 0,
                    message: format!("{name} = {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Tape handles of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_f_sup: Var,
    pub l_g_sup: Option<Var>,
    pub l_f_unsup: Option<Var>,
    pub l_g_unsup: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
        LossBreakdown {
            l_f_sup: tape.value(self.l_f_sup).item(),
            l_f_unsup: v(self.l_f_unsup),
            l_g_sup: v(self.l_g_sup),
            l_g_unsup: v(self.l_g_unsup),
            total: tape.value(self.total).item(),
        }
    }
}

/// Shared inputs of every loss evaluation.
pub struct LossContext<'a> {
    pub model: &'a ModelParams,
    pub bank: &'a MeshBank,
    pub weights: Option<Rc<[f64]>>,
}

impl LossContext<'_> {
    fn mse(&self, tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
        tape.mse(pred, target, self.weights.clone())
    }

    fn hr(&self, tape: &mut Tape, pair: &Pair) -> Result<Var> {
        Ok(tape.constant(self.bank.field(&pair.hr)?))
    }

    /// Complementary losses for paired samples `a`, `b` and an optional
    /// unpaired sample `c`; without `c` only the supervised terms exist.
    ///
    /// The pseudo-targets of the unsupervised terms are ordinary tape values,
    /// so gradients reach both sides of each comparison.
    pub fn complementary(
        &self,
        tape: &mut Tape,
        p: &Bound,
        a: &Pair,
        b: &Pair,
        c: Option<&Unpaired>,
    ) -> Result<LossVars> {
        let m = self.model;
        let bank = self.bank;
        let k = m.k();
        let (ma, mb) = (a.hr.mesh_id, b.hr.mesh_id);

        let xa = m.extract(tape, p, bank, &a.lr, ma)?;
        let xb = m.extract(tape, p, bank, &b.lr, mb)?;
        let ua = m.decode_f(tape, p, bank, xa, &a.lr, ma)?;
        let ub = m.decode_f(tape, p, bank, xb, &b.lr, mb)?;
        let ha = self.hr(tape, a)?;
        let hb = self.hr(tape, b)?;
        let fa = self.mse(tape, ua, ha)?;
        let fb = self.mse(tape, ub, hb)?;
        let l_f_sup = tape.add(fa, fb)?;

        let uab = m.decode_g(tape, p, bank, (xa, &a.lr, ma), (xb, &b.lr, mb))?;
        let tab = tape.constant(target_g(bank, &a.hr, &b.hr, k)?);
        let l_g_sup = self.mse(tape, uab, tab)?;

        let Some(c) = c else {
            let total = tape.add(l_f_sup, l_g_sup)?;
            return Ok(LossVars {
                l_f_sup,
                l_g_sup: Some(l_g_sup),
                l_f_unsup: None,
                l_g_unsup: None,
                total,
            });
        };
        let mc = c.hr_mesh_id;
        let xc = m.extract(tape, p, bank, &c.lr, mc)?;
        let uc = m.decode_f(tape, p, bank, xc, &c.lr, mc)?;
        let uca = m.decode_g(tape, p, bank, (xc, &c.lr, mc), (xa, &a.lr, ma))?;
        let ubc = m.decode_g(tape, p, bank, (xb, &b.lr, mb), (xc, &c.lr, mc))?;

        // F is supervised by G's differences anchored at known HR fields
        let ha_on_c = project(tape, bank, ha, ma, mc, k)?;
        let target1 = tape.add(uca, ha_on_c)?;
        let f1 = self.mse(tape, uc, target1)?;
        let hb_minus = tape.sub(hb, ubc)?;
        let target2 = project(tape, bank, hb_minus, mb, mc, k)?;
        let f2 = self.mse(tape, uc, target2)?;
        let l_f_unsup = tape.add(f1, f2)?;

        // G is supervised by F's prediction on the unpaired sample
        let target3 = tape.sub(uc, ha_on_c)?;
        let g1 = self.mse(tape, uca, target3)?;
        let uc_on_b = project(tape, bank, uc, mc, mb, k)?;
        let target4 = tape.sub(hb, uc_on_b)?;
        let g2 = self.mse(tape, ubc, target4)?;
        let l_g_unsup = tape.add(g1, g2)?;

        let l_f = tape.add(l_f_sup, l_f_unsup)?;
        let l_g = tape.add(l_g_sup, l_g_unsup)?;
        let total = tape.add(l_f, l_g)?;
        Ok(LossVars {
            l_f_sup,
            l_g_sup: Some(l_g_sup),
            l_f_unsup: Some(l_f_unsup),
            l_g_unsup: Some(l_g_unsup),
            total,
        })
    }

    /// `ℓ(F(u_l), u_h)` for one pair.
    pub fn supervised(&self, tape: &mut Tape, p: &Bound, pair: &Pair) -> Result<LossVars> {
        let pred = self
            .model
            .forward_f(tape, p, self.bank, &pair.lr, pair.hr.mesh_id)?;
        let truth = self.hr(tape, pair)?;
        let l = self.mse(tape, pred, truth)?;
        Ok(LossVars {
            l_f_sup: l,
            l_g_sup: None,
            l_f_unsup: None,
            l_g_unsup: None,
            total: l,
        })
    }
}

/// Runs `build` on a fresh tape, backpropagates its total, and applies one
/// Adam step to every parameter. Nothing is updated if the losses fail
/// [`LossBreakdown::check`].
pub fn optimizer_step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    build: impl FnOnce(&ModelParams, &mut Tape, &Bound) -> Result<LossVars>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let vars = build(model, &mut tape, &p)?;
    let losses = vars.values(&tape);
    losses.check()?;
    let mut grads = tape.backward(vars.total)?;
    let grads = p.gradients(&mut grads);
    drop(tape);
    adam.step(model.store.values_mut(), &grads)?;
    Ok(losses)
}

/// One complementary step on the triple `(a, b, c)`.
pub fn step_complementary(
    model: &mut ModelParams,
    adam: &mut AdamState,
    bank: &MeshBank,
    weights: Option<Rc<[f64]>>,
    (a, b, c): (&Pair, &Pair, Option<&Unpaired>),
) -> Result<LossBreakdown> {
    optimizer_step(model, adam, |m, tape, p| {
        LossContext {
            model: m,
            bank,
            weights,
        }
        .complementary(tape, p, a, b, c)
    })
}

/// One supervised step of F on `pair`; G's parameters receive zero gradient.
pub fn step_supervised(
    model: &mut ModelParams,
    adam: &mut AdamState,
    bank: &MeshBank,
    weights: Option<Rc<[f64]>>,
    pair: &Pair,
) -> Result<LossBreakdown> {
    optimizer_step(model, adam, |m, tape, p| {
        LossContext {
            model: m,
            bank,
            weights,
        }
        .supervised(tape, p, pair)
    })
}
