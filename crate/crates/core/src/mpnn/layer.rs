use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::MeshGraph;
use super::mlp::MlpBlock;
use crate::error::{Error, Result};
use crate::grad::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Hidden layers in every MLP built by this crate.
pub const MLP_HIDDEN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Sage,
    Gin,
    Mgn,
}

impl LayerKind {
    pub fn uses_edges(self) -> bool {
        self == LayerKind::Mgn
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "sage" => Ok(LayerKind::Sage),
            "gin" => Ok(LayerKind::Gin),
            "mgn" => Ok(LayerKind::Mgn),
            other => Err(Error::Config(format!(
                "unknown layer kind {other:?} (gcn, sage, gin, mgn)"
            ))),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Sage => "sage",
            LayerKind::Gin => "gin",
            LayerKind::Mgn => "mgn",
        };
        f.write_str(s)
    }
}

/// Which centering steps a layer applies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Centering {
    pub node: bool,
    pub message: bool,
}

impl Centering {
    pub const NONE: Centering = Centering {
        node: false,
        message: false,
    };
    pub const BOTH: Centering = Centering {
        node: true,
        message: true,
    };
}

impl FromStr for Centering {
    type Err = Error;

    /// `none`, `n`, `m` or `nm`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "o" => Ok(Centering::NONE),
            "n" => Ok(Centering {
                node: true,
                message: false,
            }),
            "m" => Ok(Centering {
                node: false,
                message: true,
            }),
            "nm" | "mn" | "n+m" => Ok(Centering::BOTH),
            other => Err(Error::Config(format!(
                "unknown centering {other:?} (none, n, m, nm)"
            ))),
        }
    }
}

impl fmt::Display for Centering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match (self.node, self.message) {
            (false, false) => "none",
            (true, false) => "n",
            (false, true) => "m",
            (true, true) => "nm",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Gcn {
        theta: ParamId,
    },
    Sage {
        w1: ParamId,
        w2: ParamId,
    },
    Gin {
        mlp: MlpBlock,
        eps: ParamId,
    },
    Mgn {
        edge_mlp: MlpBlock,
        node_mlp: MlpBlock,
    },
}

/// One message-passing layer of hidden width `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpnnLayer {
    params: LayerParams,
    centering: Centering,
    width: usize,
}

/// Result of [`MpnnLayer::forward`]. `agg` is the aggregated message tensor
/// as fed to the node update (after message centering, if enabled); GCN fuses
/// aggregation into the update and reports `None`.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub x: Var,
    pub e: Option<Var>,
    pub agg: Option<Var>,
}

impl MpnnLayer {
    pub fn new(
        kind: LayerKind,
        centering: Centering,
        width: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config(format!(
                "{name}: hidden width must be positive"
            )));
        }
        if kind == LayerKind::Gcn && centering.message {
            return Err(Error::Config(format!(
                "{name}: gcn fuses aggregation and update, so message centering does not apply"
            )));
        }
        let h = width;
        let mlp_dims = |input: usize| -> Vec<usize> {
            let mut d = vec![input];
            d.extend(std::iter::repeat_n(h, MLP_HIDDEN_LAYERS + 1));
            d
        };
        let params = match kind {
            LayerKind::Gcn => LayerParams::Gcn {
                theta: store.add_uniform(format!("{name}.theta"), h, h, rng),
            },
            LayerKind::Sage => LayerParams::Sage {
                w1: store.add_uniform(format!("{name}.w1"), h, h, rng),
                w2: store.add_uniform(format!("{name}.w2"), h, h, rng),
            },
            LayerKind::Gin => LayerParams::Gin {
                mlp: MlpBlock::new(store, rng, &format!("{name}.mlp"), &mlp_dims(h), false)?,
                eps: store.add(format!("{name}.eps"), Tensor::zeros(1, 1)),
            },
            LayerKind::Mgn => LayerParams::Mgn {
                edge_mlp: MlpBlock::new(
                    store,
                    rng,
                    &format!("{name}.edge_mlp"),
                    &mlp_dims(3 * h),
                    false,
                )?,
                node_mlp: MlpBlock::new(
                    store,
                    rng,
                    &format!("{name}.node_mlp"),
                    &mlp_dims(2 * h),
                    false,
                )?,
            },
        };
        Ok(MpnnLayer {
            params,
            centering,
            width,
        })
    }

    /// Assembles a layer from existing parameters. Widths are checked on the
    /// first forward call.
    pub fn from_params(params: LayerParams, centering: Centering, width: usize) -> Result<Self> {
        if matches!(params, LayerParams::Gcn { .. }) && centering.message {
            return Err(Error::Config("gcn does not take message centering".into()));
        }
        Ok(MpnnLayer {
            params,
            centering,
            width,
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self.params {
            LayerParams::Gcn { .. } => LayerKind::Gcn,
            LayerParams::Sage { .. } => LayerKind::Sage,
            LayerParams::Gin { .. } => LayerKind::Gin,
            LayerParams::Mgn { .. } => LayerKind::Mgn,
        }
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        graph: &MeshGraph,
        x: Var,
        e: Option<Var>,
    ) -> Result<LayerOutput> {
        let (n, w) = tape.value(x).dims2("layer_forward")?;
        if n != graph.n_nodes() || w != self.width {
            return Err(Error::dim(
                "layer_forward",
                format!(
                    "x is {n}x{w}, layer expects {}x{}",
                    graph.n_nodes(),
                    self.width
                ),
            ));
        }
        let msg_center = |tape: &mut Tape, agg: Var| -> Result<Var> {
            if self.centering.message {
                tape.center_rows(agg)
            } else {
                Ok(agg)
            }
        };
        let (x_new, e_new, agg) = match &self.params {
            LayerParams::Gcn { theta } => {
                let xt = tape.matmul(x, p.var(*theta))?;
                (tape.mix(xt, graph.gcn_mix().clone())?, e, None)
            }
            LayerParams::Sage { w1, w2 } => {
                let xj = tape.gather_rows(x, graph.src().clone())?;
                let agg = tape.segment_mean(xj, graph.dst().clone(), n)?;
                let agg = msg_center(tape, agg)?;
                let a = tape.matmul(x, p.var(*w1))?;
                let b = tape.matmul(agg, p.var(*w2))?;
                (tape.add(a, b)?, e, Some(agg))
            }
            LayerParams::Gin { mlp, eps } => {
                let xj = tape.gather_rows(x, graph.src().clone())?;
                let agg = tape.segment_sum(xj, graph.dst().clone(), n)?;
                let agg = msg_center(tape, agg)?;
                let ex = tape.scale_by(x, p.var(*eps))?;
                let self_term = tape.add(x, ex)?;
                let pre = tape.add(self_term, agg)?;
                (mlp.forward(tape, p, pre)?, e, Some(agg))
            }
            LayerParams::Mgn { edge_mlp, node_mlp } => {
                let Some(e) = e else {
                    return Err(Error::Contract("mgn layer needs edge features".into()));
                };
                let (ne, _) = tape.value(e).dims2("layer_forward")?;
                if ne != graph.n_edges() {
                    return Err(Error::dim(
                        "layer_forward",
                        format!("{ne} edge rows for {} edges", graph.n_edges()),
                    ));
                }
                let e_new = edge_mlp.forward_parts(
                    tape,
                    p,
                    &[
                        (x, Some(graph.dst().clone())),
                        (x, Some(graph.src().clone())),
                        (e, None),
                    ],
                )?;
                let agg = tape.segment_sum(e_new, graph.dst().clone(), n)?;
                let agg = msg_center(tape, agg)?;
                let x_new = node_mlp.forward_parts(tape, p, &[(x, None), (agg, None)])?;
                (x_new, Some(e_new), Some(agg))
            }
        };
        let x_new = if self.centering.node {
            tape.center_rows(x_new)?
        } else {
            x_new
        };
        Ok(LayerOutput {
            x: x_new,
            e: e_new,
            agg,
        })
    }
}
