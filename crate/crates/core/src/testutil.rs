//! Shared helpers for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grad::{Bound, ParamStore, Tape, Tensor, Var};
use crate::Result;

pub fn random(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Compares backward gradients of `Σ w ∘ f(params)` against central finite
/// differences for every scalar in `store`. Relative error uses a floor of
/// 1e-3 in the denominator.
pub fn check_store_grads(
    store: &ParamStore,
    f: &dyn Fn(&mut Tape, &Bound) -> Result<Var>,
    tol: f64,
) {
    let shape = {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let out = f(&mut tape, &b).unwrap();
        tape.value(out).clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let weights = Tensor::new(
        shape.shape().to_vec(),
        (0..shape.len())
            .map(|_| rng.random_range(0.5..1.5))
            .collect(),
    )
    .unwrap();
    let loss_of = |s: &ParamStore, want_grads: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let out = f(&mut tape, &b).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !want_grads {
            return (value, Vec::new());
        }
        let mut g = tape.backward(loss).unwrap();
        (value, b.gradients(&mut g))
    };
    let (_, analytic) = loss_of(store, true);
    let h = 1e-6;
    let mut work = store.clone();
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let x0 = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = x0 + h;
            let up = loss_of(&work, false).0;
            work.get_mut(id).data_mut()[i] = x0 - h;
            let down = loss_of(&work, false).0;
            work.get_mut(id).data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(
                rel <= tol,
                "{}[{i}]: analytic {a} vs numeric {numeric} (rel {rel:e})",
                store.name(id)
            );
        }
    }
}

/// Zero biases put whole ReLU rows exactly on the kink, where finite
/// differences are meaningless; gradchecks move them off it first.
pub fn randomize_biases(store: &mut ParamStore, rng: &mut impl Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".b") {
            let t = store.get(id);
            let fresh = random(rng, t.rows(), t.cols());
            *store.get_mut(id) = fresh;
        }
    }
}
