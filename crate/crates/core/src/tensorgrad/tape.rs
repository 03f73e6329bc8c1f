use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Neg(Var),
    Log(Var),
    Relu(Var),
    Scale(Var, f64),
    Clip(Var, f64, f64),
    /// Max over rows inside each segment; `argmax[out]` is the source row.
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Mean(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward/backward cycle.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and `backward` can walk the record in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

/// (rows, cols) view of a rank-1 or rank-2 shape; last axis is `cols`.
fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [c] => Some((1, *c)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `out[m×n] (+)= a[m×k] · b[k×n]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Records a tensor as a leaf; it is differentiable iff the tensor requires grad.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::dim("leaf", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, Op::Leaf, true))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::dim("constant", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, Op::Constant, false))
    }

    /// Same values, no gradient path back to `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Constant, false)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.node(x);
        if numel(&shape) != n.value.len() {
            return Err(Error::dim("reshape", &n.shape, &shape));
        }
        let (value, g) = (n.value.clone(), n.needs_grad);
        Ok(self.push(shape, value, Op::Reshape(x), g))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let (m, k, n) = match (na.shape.as_slice(), nb.shape.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::dim("matmul", &na.shape, &nb.shape)),
        };
        let mut out = vec![0.0; m * n];
        matmul_acc(&na.value, &nb.value, &mut out, m, k, n);
        let g = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), g))
    }

    /// `x[m×n] + b[n]`, bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (nx, nb) = (self.node(x), self.node(b));
        let cols = match (rows_cols(&nx.shape), nb.shape.as_slice()) {
            (Some((_, c)), [bc]) if c == *bc => c,
            _ => return Err(Error::dim("add_bias", &nx.shape, &nb.shape)),
        };
        let mut out = nx.value.clone();
        for row in out.chunks_mut(cols) {
            add_into(row, &nb.value);
        }
        let g = nx.needs_grad || nb.needs_grad;
        let shape = nx.shape.clone();
        Ok(self.push(shape, out, Op::AddBias(x, b), g))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.shape != nb.shape {
            return Err(Error::dim(name, &na.shape, &nb.shape));
        }
        let out = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let g = na.needs_grad || nb.needs_grad;
        let shape = na.shape.clone();
        Ok(self.push(shape, out, op, g))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| f(v)).collect();
        let (shape, g) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, op, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, libm::log, Op::Log(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    /// Elementwise clamp to `[lo, hi]`. Gradient passes where `lo <= x <= hi`
    /// and is exactly zero outside.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::Parameter(format!("clip bounds lo={lo} > hi={hi}")));
        }
        Ok(self.unary(x, |v| v.clamp(lo, hi), Op::Clip(x, lo, hi)))
    }

    /// Column-wise max over contiguous row segments of a `[rows×cols]` input.
    ///
    /// `offsets` holds the segment boundaries (`offsets[0] == 0`, last entry
    /// equals the row count). Output is `[segments×cols]`. Ties resolve to the
    /// lowest row index.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = match n.shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(Error::dim("segment_max", &n.shape, &[])),
        };
        let valid = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == rows
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::dim("segment_max", &n.shape, offsets));
        }
        let segs = offsets.len() - 1;
        let mut out = vec![0.0; segs * cols];
        let mut argmax = vec![0usize; segs * cols];
        for s in 0..segs {
            let (start, end) = (offsets[s], offsets[s + 1]);
            let best = &mut out[s * cols..(s + 1) * cols];
            let arg = &mut argmax[s * cols..(s + 1) * cols];
            best.copy_from_slice(&n.value[start * cols..(start + 1) * cols]);
            arg.iter_mut().for_each(|a| *a = start);
            for r in start + 1..end {
                let row = &n.value[r * cols..(r + 1) * cols];
                for j in 0..cols {
                    if row[j] > best[j] {
                        best[j] = row[j];
                        arg[j] = r;
                    }
                }
            }
        }
        let g = n.needs_grad;
        Ok(self.push(vec![segs, cols], out, Op::SegmentMax { x, argmax }, g))
    }

    /// Max over the row axis of a `[rows×cols]` input, giving `[cols]`.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let rows = match self.shape(x) {
            [r, _] => *r,
            s => return Err(Error::dim("max_rows", s, &[])),
        };
        let cols = self.shape(x)[1];
        let m = self.segment_max(x, &[0, rows])?;
        self.reshape(m, vec![cols])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let s = n.value.iter().sum();
        let g = n.needs_grad;
        self.push(Vec::new(), vec![s], Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let s = n.value.iter().sum::<f64>() / n.value.len() as f64;
        let g = n.needs_grad;
        self.push(Vec::new(), vec![s], Op::Mean(x), g)
    }

    fn check_finite(&self, x: Var, op: &str) -> Result<(usize, usize)> {
        let n = self.node(x);
        let rc = rows_cols(&n.shape).ok_or_else(|| Error::dim("softmax", &n.shape, &[]))?;
        if rc.1 < 1 {
            return Err(Error::dim("softmax", &n.shape, &[]));
        }
        if n.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{op} input contains non-finite values")));
        }
        Ok(rc)
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.check_finite(x, "softmax")?;
        let n = self.node(x);
        let mut out = n.value.clone();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let (shape, g) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, Op::Softmax(x), g))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.check_finite(x, "log_softmax")?;
        let n = self.node(x);
        let mut out = n.value.clone();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let (shape, g) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, Op::LogSoftmax(x), g))
    }

    /// One entry per row: `out[r] = x[r, indices[r]]`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = rows_cols(&n.shape).ok_or_else(|| Error::dim("pick", &n.shape, &[]))?;
        if indices.len() != rows {
            return Err(Error::dim("pick", &n.shape, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::Index {
                index: bad,
                bound: cols,
            });
        }
        let out = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| n.value[r * cols + i])
            .collect();
        let g = n.needs_grad;
        Ok(self.push(
            vec![rows],
            out,
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
            g,
        ))
    }

    /// Accumulates d`loss`/d`leaf` into every differentiable leaf.
    ///
    /// Calling it again without [`Tape::zero_grad`] adds to the stored
    /// gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::NotScalar(ln.shape.clone()));
        }
        let Tape { nodes, leaf_grads } = self;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
            let node = &nodes[v.0];
            if !node.needs_grad {
                return None;
            }
            let len = node.value.len();
            Some(adj[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut leaf_grads[id] {
                    Some(acc) => add_into(acc, &g),
                    None => leaf_grads[id] = Some(g),
                },
                Op::Constant => {}
                Op::Reshape(x) => {
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        add_into(dx, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0], &nodes[b.0]);
                    let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv.value[p * n..(p + 1) * n];
                                da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = av.value[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                db[p * n..(p + 1) * n]
                                    .iter_mut()
                                    .zip(grow)
                                    .for_each(|(d, gv)| *d += aip * gv);
                            }
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        add_into(dx, &g);
                    }
                    let cols = nodes[b.0].value.len();
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for row in g.chunks(cols) {
                            add_into(db, row);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        add_into(da, &g);
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        add_into(db, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        add_into(da, &g);
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        db.iter_mut().zip(&g).for_each(|(d, gv)| *d -= gv);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for i in 0..g.len() {
                            da[i] += g[i] * bv[i];
                        }
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for i in 0..g.len() {
                            db[i] += g[i] * av[i];
                        }
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for i in 0..g.len() {
                            da[i] += g[i] / bv[i];
                        }
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for i in 0..g.len() {
                            db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    }
                }
                Op::Min(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for i in 0..g.len() {
                            if av[i] <= bv[i] {
                                da[i] += g[i];
                            }
                        }
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for i in 0..g.len() {
                            if av[i] > bv[i] {
                                db[i] += g[i];
                            }
                        }
                    }
                }
                Op::Neg(x) => {
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        dx.iter_mut().zip(&g).for_each(|(d, gv)| *d -= gv);
                    }
                }
                Op::Log(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for i in 0..g.len() {
                            dx[i] += g[i] / xv[i];
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for i in 0..g.len() {
                            if xv[i] > 0.0 {
                                dx[i] += g[i];
                            }
                        }
                    }
                }
                Op::Scale(x, s) => {
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        dx.iter_mut().zip(&g).for_each(|(d, gv)| *d += s * gv);
                    }
                }
                Op::Clip(x, lo, hi) => {
                    let xv = &nodes[x.0].value;
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for i in 0..g.len() {
                            if *lo <= xv[i] && xv[i] <= *hi {
                                dx[i] += g[i];
                            }
                        }
                    }
                }
                Op::SegmentMax { x, argmax } => {
                    let cols = nodes[x.0].shape[1];
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for (o, &r) in argmax.iter().enumerate() {
                            dx[r * cols + o % cols] += g[o];
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean(x) => {
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        let s = g[0] / dx.len() as f64;
                        dx.iter_mut().for_each(|d| *d += s);
                    }
                }
                Op::Softmax(x) => {
                    let cols = *node.shape.last().unwrap();
                    let y = &node.value;
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for r in 0..y.len() / cols {
                            let (ys, gs) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                            let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                dx[r * cols + j] += ys[j] * (gs[j] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let cols = *node.shape.last().unwrap();
                    let y = &node.value;
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for r in 0..y.len() / cols {
                            let gs = &g[r * cols..(r + 1) * cols];
                            let total: f64 = gs.iter().sum();
                            for j in 0..cols {
                                dx[r * cols + j] += gs[j] - libm::exp(y[r * cols + j]) * total;
                            }
                        }
                    }
                }
                Op::Pick { x, indices } => {
                    let cols = *nodes[x.0].shape.last().unwrap();
                    if let Some(dx) = slot(&mut adj, nodes, *x) {
                        for (r, &i) in indices.iter().enumerate() {
                            dx[r * cols + i] += g[r];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Max-subtracted softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
