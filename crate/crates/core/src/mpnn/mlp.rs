use rand::Rng;

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::grad::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Chain of affine layers with ReLU between them and no activation after the
/// last one.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBlock {
    layers: Vec<Affine>,
    dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl MlpBlock {
    /// `dims = [in, hidden.., out]`; two entries give a single affine map.
    /// When `zero_last` is set the final weight matrix starts at zero.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: &[usize],
        zero_last: bool,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "{name}: invalid MLP dimensions {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = if zero_last && i + 1 == n {
                    store.add(format!("{name}.{i}.w"), Tensor::zeros(w[0], w[1]))
                } else {
                    store.add_uniform(format!("{name}.{i}.w"), w[0], w[1], rng)
                };
                let bias = store.add(format!("{name}.{i}.b"), Tensor::zeros(1, w[1]));
                Affine { weight, bias }
            })
            .collect();
        Ok(MlpBlock {
            layers,
            dims: dims.to_vec(),
        })
    }

    pub fn layers(&self) -> &[Affine] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        self.forward_parts(tape, params, &[(x, None)])
    }

    /// Same as [`forward`](Self::forward) on the column concatenation of
    /// `parts`, where a part with an index contributes `x[index[e]]` to row
    /// `e`. The first layer is applied to each part before gathering, so
    /// nothing of edge count times total width is ever built.
    pub fn forward_parts(
        &self,
        tape: &mut Tape,
        params: &Bound,
        parts: &[(Var, Option<Rc<[usize]>>)],
    ) -> Result<Var> {
        let mut width = 0;
        let mut rows = None;
        for (x, index) in parts {
            let (r, c) = tape.value(*x).dims2("mlp_forward")?;
            let r = index.as_ref().map_or(r, |i| i.len());
            if *rows.get_or_insert(r) != r {
                return Err(Error::dim("mlp_forward", "parts disagree on row count"));
            }
            width += c;
        }
        if width != self.in_dim() {
            return Err(Error::dim(
                "mlp_forward",
                format!("input width {width}, block expects {}", self.in_dim()),
            ));
        }
        let first = &self.layers[0];
        let w = params.var(first.weight);
        let mut acc: Option<Var> = None;
        let mut offset = 0;
        for (x, index) in parts {
            let c = tape.value(*x).cols();
            let block = if parts.len() == 1 {
                w
            } else {
                tape.slice_rows(w, offset, c)?
            };
            offset += c;
            let mut z = tape.matmul(*x, block)?;
            if let Some(index) = index {
                z = tape.gather_rows(z, index.clone())?;
            }
            acc = Some(match acc {
                Some(a) => tape.add(a, z)?,
                None => z,
            });
        }
        let z = acc.ok_or_else(|| Error::Contract("mlp_forward with no inputs".into()))?;
        let mut h = tape.add_bias(z, params.var(first.bias))?;
        for layer in &self.layers[1..] {
            h = tape.relu(h);
            let z = tape.matmul(h, params.var(layer.weight))?;
            h = tape.add_bias(z, params.var(layer.bias))?;
        }
        Ok(h)
    }
}
