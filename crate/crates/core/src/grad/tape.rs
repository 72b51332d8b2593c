use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fixed linear row mixing: output row `t` is `Σ w · input[src]` over the
/// entries of `rows[t]`. Used for kNN projections and weighted aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMix {
    n_src: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMix {
    pub fn new(n_src: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for row in &rows {
            for &(s, _) in row {
                if s >= n_src {
                    return Err(Error::Index {
                        op: "sparse_mix",
                        index: s,
                        len: n_src,
                    });
                }
            }
        }
        Ok(SparseMix { n_src, rows })
    }

    pub fn n_src(&self) -> usize {
        self.n_src
    }

    pub fn n_dst(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Applies the mix to a plain `n_src × d` matrix.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (r, d) = x.dims2("sparse_mix")?;
        if r != self.n_src {
            return Err(Error::dim(
                "sparse_mix",
                format!("input has {r} rows, mix expects {}", self.n_src),
            ));
        }
        let src = x.data();
        let mut out = vec![0.0; self.rows.len() * d];
        for (t, row) in self.rows.iter().enumerate() {
            let dst = &mut out[t * d..(t + 1) * d];
            for &(s, w) in row {
                for (o, v) in dst.iter_mut().zip(&src[s * d..(s + 1) * d]) {
                    *o += w * v;
                }
            }
        }
        Ok(Tensor::matrix(self.rows.len(), d, out))
    }

    fn apply_transpose(&self, g: &Tensor) -> Tensor {
        let d = g.cols();
        let mut out = vec![0.0; self.n_src * d];
        for (t, row) in self.rows.iter().enumerate() {
            let gt = g.row(t);
            for &(s, w) in row {
                for (o, v) in out[s * d..(s + 1) * d].iter_mut().zip(gt) {
                    *o += w * v;
                }
            }
        }
        Tensor::matrix(self.n_src, d, out)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[usize]>, Rc<[f64]>),
    Mix(Var, Rc<SparseMix>),
    CenterRows(Var),
    Mse(Var, Var, Option<Rc<[f64]>>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    is_param: bool,
}

/// Define-by-run record of tensor operations.
///
/// Nodes are appended in creation order, so parents always precede children
/// and the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`]. Only leaves
/// (constants and parameters) keep theirs.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf; `backward` always reports a gradient for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].is_param = true;
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), ng))
    }

    /// Adds a `1×c` (or length-`c`) row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("add_bias")?;
        if self.value(bias).len() != c {
            return Err(Error::dim(
                "add_bias",
                format!("bias of length {} for {c} columns", self.value(bias).len()),
            ));
        }
        let mut out = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for row in out.chunks_exact_mut(c.max(1)) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::matrix(r, c, out), Op::AddBias(x, bias), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, c), ng)
    }

    /// Multiplies `x` by a single-element tensor `s` (which may be trainable).
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(
                "scale_by",
                format!("scale factor has shape {:?}", self.value(s).shape()),
            ));
        }
        let c = self.value(s).item();
        let v = self.value(x).map(|a| a * c);
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(v, Op::ScaleBy(x, s), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        };
        let rows = self.value(first).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row counts {rows} and {r} differ"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, total, out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2("slice_rows")?;
        if start + len > n {
            return Err(Error::Index {
                op: "slice_rows",
                index: start + len,
                len: n,
            });
        }
        let out = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(len, d, out), Op::SliceRows(x, start), ng))
    }

    /// Row `e` of the output is row `index[e]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let (n, d) = self.value(x).dims2("gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            if i >= n {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(self.value(x).row(i));
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(index.len(), d, out),
            Op::GatherRows(x, index),
            ng,
        ))
    }

    fn check_targets(
        &self,
        op: &'static str,
        x: Var,
        targets: &[usize],
        n_rows: usize,
    ) -> Result<(usize, usize)> {
        let (e, d) = self.value(x).dims2(op)?;
        if e != targets.len() {
            return Err(Error::dim(
                op,
                format!("{e} message rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n_rows) {
            return Err(Error::Index {
                op,
                index: bad,
                len: n_rows,
            });
        }
        Ok((e, d))
    }

    fn scatter_add(values: &Tensor, targets: &[usize], n_rows: usize) -> Vec<f64> {
        let d = values.cols();
        let mut out = vec![0.0; n_rows * d];
        for (e, &t) in targets.iter().enumerate() {
            for (o, v) in out[t * d..(t + 1) * d].iter_mut().zip(values.row(e)) {
                *o += v;
            }
        }
        out
    }

    /// Row `i` of the output sums every message row whose target is `i`.
    pub fn segment_sum(
        &mut self,
        messages: Var,
        targets: Rc<[usize]>,
        n_rows: usize,
    ) -> Result<Var> {
        let (_, d) = self.check_targets("segment_sum", messages, &targets, n_rows)?;
        let out = Self::scatter_add(self.value(messages), &targets, n_rows);
        let ng = self.ng(messages);
        Ok(self.push(
            Tensor::matrix(n_rows, d, out),
            Op::SegmentSum(messages, targets),
            ng,
        ))
    }

    /// Like [`Tape::segment_sum`] but divided by the per-target message count
    /// (clamped to 1, so isolated rows stay zero).
    pub fn segment_mean(
        &mut self,
        messages: Var,
        targets: Rc<[usize]>,
        n_rows: usize,
    ) -> Result<Var> {
        let (_, d) = self.check_targets("segment_mean", messages, &targets, n_rows)?;
        let mut counts = vec![0.0; n_rows];
        for &t in targets.iter() {
            counts[t] += 1.0;
        }
        let inv: Rc<[f64]> = counts.iter().map(|&c: &f64| 1.0 / c.max(1.0)).collect();
        let mut out = Self::scatter_add(self.value(messages), &targets, n_rows);
        for (i, row) in out.chunks_exact_mut(d.max(1)).enumerate() {
            for v in row {
                *v *= inv[i];
            }
        }
        let ng = self.ng(messages);
        Ok(self.push(
            Tensor::matrix(n_rows, d, out),
            Op::SegmentMean(messages, targets, inv),
            ng,
        ))
    }

    pub fn mix(&mut self, x: Var, map: Rc<SparseMix>) -> Result<Var> {
        let v = map.apply(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Mix(x, map), ng))
    }

    /// Subtracts the column means from every row.
    pub fn center_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2("center_rows")?;
        if n == 0 {
            return Err(Error::Contract("center_rows on an empty matrix".into()));
        }
        let v = center(self.value(x), n, d);
        let ng = self.ng(x);
        Ok(self.push(v, Op::CenterRows(x), ng))
    }

    /// Mean (optionally column-weighted) squared error, as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var, weights: Option<Rc<[f64]>>) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let p = self.value(pred);
        let cols = p.cols();
        if let Some(w) = &weights {
            if w.len() != cols {
                return Err(Error::dim(
                    "mse",
                    format!("{} weights for {cols} columns", w.len()),
                ));
            }
        }
        let t = self.value(target);
        let n = p.len();
        let mut acc = 0.0;
        for (i, (a, b)) in p.data().iter().zip(t.data()).enumerate() {
            let r = a - b;
            let w = weights.as_ref().map_or(1.0, |w| w[i % cols]);
            acc += w * r * r;
        }
        let value = if n == 0 { 0.0 } else { acc / n as f64 };
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(Tensor::scalar(value), Op::Mse(pred, target, weights), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every parameter leaf receives a gradient; parameters the loss does
    /// not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.is_param && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.ng(*a) {
                    match &mut grads[a.0] {
                        Some(ga) => gemm(
                            m,
                            n,
                            k,
                            g.data(),
                            false,
                            bv.data(),
                            true,
                            1.0,
                            ga.data_mut(),
                        ),
                        slot @ None => {
                            let mut ga = vec![0.0; m * k];
                            gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut ga);
                            *slot = Some(Tensor::matrix(m, k, ga));
                        }
                    }
                }
                if self.ng(*b) {
                    match &mut grads[b.0] {
                        Some(gb) => gemm(
                            k,
                            m,
                            n,
                            av.data(),
                            true,
                            g.data(),
                            false,
                            1.0,
                            gb.data_mut(),
                        ),
                        slot @ None => {
                            let mut gb = vec![0.0; k * n];
                            gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut gb);
                            *slot = Some(Tensor::matrix(k, n, gb));
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.ng(*b) {
                    let sums = g.column_sums();
                    let shape = self.value(*b).shape().to_vec();
                    acc(*b, Tensor::new(shape, sums).expect("bias shape"));
                }
                acc(*x, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, |gi, bi| gi * bi));
                acc(*b, g.zip_map(av, |gi, ai| gi * ai));
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(*x, g.map(|v| v * c));
            }
            Op::ScaleBy(x, s) => {
                let sv = self.value(*s);
                let c = sv.item();
                if self.ng(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    acc(
                        *s,
                        Tensor::new(sv.shape().to_vec(), vec![dot]).expect("scalar shape"),
                    );
                }
                acc(*x, g.map(|v| v * c));
            }
            Op::Relu(x) => {
                acc(
                    *x,
                    g.zip_map(self.value(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut out = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            out.extend_from_slice(
                                &g.data()[i * total + offset..i * total + offset + w],
                            );
                        }
                        acc(p, Tensor::matrix(rows, w, out));
                    }
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let (n, d) = (self.value(*x).rows(), g.cols());
                let mut out = vec![0.0; n * d];
                out[start * d..start * d + g.len()].copy_from_slice(g.data());
                acc(*x, Tensor::matrix(n, d, out));
            }
            Op::GatherRows(x, index) => {
                let n = self.value(*x).rows();
                let d = g.cols();
                acc(*x, Tensor::matrix(n, d, Self::scatter_add(g, index, n)));
            }
            Op::SegmentSum(x, targets) => {
                acc(*x, gather(g, targets));
            }
            Op::SegmentMean(x, targets, inv) => {
                let d = g.cols();
                let mut out = gather(g, targets);
                for (e, row) in out.data_mut().chunks_exact_mut(d.max(1)).enumerate() {
                    let w = inv[targets[e]];
                    for v in row {
                        *v *= w;
                    }
                }
                acc(*x, out);
            }
            Op::Mix(x, map) => {
                acc(*x, map.apply_transpose(g));
            }
            Op::CenterRows(x) => {
                let (n, d) = (g.rows(), g.cols());
                acc(*x, center(g, n, d));
            }
            Op::Mse(p, t, weights) => {
                let pv = self.value(*p);
                let tv = self.value(*t);
                let cols = pv.cols();
                let scale = 2.0 * g.item() / (pv.len().max(1) as f64);
                let data: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .enumerate()
                    .map(|(i, (a, b))| {
                        let w = weights.as_ref().map_or(1.0, |w| w[i % cols]);
                        scale * w * (a - b)
                    })
                    .collect();
                let gp = Tensor::new(pv.shape().to_vec(), data).expect("mse shape");
                if self.ng(*t) {
                    acc(*t, gp.map(|v| -v));
                }
                acc(*p, gp);
            }
            Op::Sum(x) => {
                let s = g.item();
                acc(*x, self.value(*x).map(|_| s));
            }
        }
    }
}

fn gather(g: &Tensor, index: &[usize]) -> Tensor {
    let d = g.cols();
    let mut out = Vec::with_capacity(index.len() * d);
    for &i in index {
        out.extend_from_slice(g.row(i));
    }
    Tensor::matrix(index.len(), d, out)
}

fn center(x: &Tensor, n: usize, d: usize) -> Tensor {
    let mut mean = x.column_sums();
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d.max(1)) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    Tensor::matrix(n, d, out)
}

/// Plain (tape-free) row centering.
pub fn center_rows(x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.dims2("center_rows")?;
    if n == 0 {
        return Err(Error::Contract("center_rows on an empty matrix".into()));
    }
    Ok(center(x, n, d))
}
