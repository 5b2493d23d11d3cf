//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`] in evaluation order, so the
//! tape is topologically sorted by construction. [`Graph::backward`] walks it
//! in exact reverse and accumulates adjoints into the leaves that were
//! registered with [`Graph::param`]. Calling `backward` on several losses of
//! the same tape sums their gradients; calling it twice on the same loss is
//! rejected.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Norms at or below this value are treated as degenerate by
/// [`Graph::l2_normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    MaxScalar(Var, f64),
    AddScalar(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
    Normalize(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    SoftmaxXent(Var, Vec<usize>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    consumed: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and accumulated gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.leaf_grads.clear();
        self.consumed.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        self.consumed.push(false);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        what: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                what: what.to_string(),
            });
        }
        Ok(self.push(value, op, requires_grad))
    }

    /// Registers a differentiable leaf holding a copy of `tensor`'s values.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let var = self.push(tensor.detached(), Op::Leaf, true);
        self.leaf_grads[var.0] = Some(vec![0.0; tensor.len()]);
        var
    }

    /// Registers a non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.detached(), Op::Leaf, false)
    }

    /// Same value as `v`, but gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.detached();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into a leaf created with [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::Same)
        } else if sa.is_empty() {
            Ok(Broadcast::LeftScalar)
        } else if sb.is_empty() {
            Ok(Broadcast::RightScalar)
        } else {
            Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn zip_with(
        &mut self,
        what: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let mode = self.broadcast(what, a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, values): (Vec<usize>, Vec<f64>) = match mode {
            Broadcast::Same => (
                ta.shape().to_vec(),
                ta.values()
                    .iter()
                    .zip(tb.values())
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            ),
            Broadcast::LeftScalar => {
                let x = ta.values()[0];
                (
                    tb.shape().to_vec(),
                    tb.values().iter().map(|&y| f(x, y)).collect(),
                )
            }
            Broadcast::RightScalar => {
                let y = tb.values()[0];
                (
                    ta.shape().to_vec(),
                    ta.values().iter().map(|&x| f(x, y)).collect(),
                )
            }
        };
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor::new(shape, values)?;
        self.push_checked(what, value, op, rg)
    }

    fn map(
        &mut self,
        what: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.values().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(a);
        self.push_checked(what, value, op, rg)
    }

    /// Matrix product of `[M×K]` and `[K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.nodes[a.0].value.values(), self.nodes[b.0].value.values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `row` to every row of the matrix `a` (bias addition).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: sa.to_vec(),
                rhs: sr.to_vec(),
            });
        }
        let ta = &self.nodes[a.0].value;
        let rv = self.nodes[row.0].value.values();
        let cols = sr[0];
        let values = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv[i % cols])
            .collect();
        let value = Tensor::new(sa.to_vec(), values)?;
        let rg = self.rg(a) || self.rg(row);
        self.push_checked("add_row", value, Op::AddRow(a, row), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].value.values().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        self.map("log", a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    /// `max(a, c)` elementwise. The subgradient is 1 where `a > c` and 0
    /// elsewhere, including the tie `a == c`.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("max_scalar", a, |x| if x > c { x } else { c }, Op::MaxScalar(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.values().iter().sum();
        let rg = self.rg(a);
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push_checked("mean", Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Euclidean norm along the last axis. A vector yields a scalar, an
    /// `[R×C]` matrix yields `[R]`. The gradient at a zero row is taken as 0.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let shape = reduced_shape(t.shape());
        let norms: Vec<f64> = (0..t.rows()).map(|i| super::l2_norm(t.row(i))).collect();
        let rg = self.rg(a);
        self.push_checked("row_norm", Tensor::new(shape, norms)?, Op::RowNorm(a), rg)
    }

    /// Scales every row (the whole vector for 1-D input) to unit Euclidean
    /// norm. Rows with norm `<= NORM_EPSILON` are rejected.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let cols = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        let mut out = Vec::with_capacity(t.len());
        for i in 0..t.rows() {
            let row = t.row(i);
            let n = super::l2_norm(row);
            if n <= NORM_EPSILON || !n.is_finite() {
                return Err(Error::DegenerateVector { norm: n });
            }
            norms.push(n);
            out.extend(row.iter().map(|x| x / n));
        }
        debug_assert_eq!(out.len(), t.rows() * cols);
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        self.push_checked("l2_normalize", value, Op::Normalize(a, norms), rg)
    }

    /// Selects rows of a `[R×C]` matrix; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let rows = t.shape()[0];
        let mut out = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(indices.len(), t.cols(), out)?;
        let rg = self.rg(a);
        self.push_checked(
            "gather_rows",
            value,
            Op::GatherRows(a, indices.to_vec()),
            rg,
        )
    }

    /// Per-row `-log softmax(logits)[label]`, evaluated with max subtraction.
    /// A 1-D logits vector takes one label and yields a scalar; an `[R×N]`
    /// matrix takes `R` labels and yields `[R]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        if t.shape().is_empty() || t.shape().len() > 2 || labels.len() != t.rows() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let n = t.cols();
        let mut losses = Vec::with_capacity(labels.len());
        let mut probs = Vec::with_capacity(t.len());
        for (i, &label) in labels.iter().enumerate() {
            if label >= n {
                return Err(Error::Index {
                    index: label,
                    len: n,
                });
            }
            let row = t.row(i);
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, am), (j, x)| {
                    if x > am {
                        (j, x)
                    } else {
                        (ai, am)
                    }
                });
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            // exps[arg] == 1; ln_1p keeps tiny losses accurate.
            let rest: f64 = exps
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, e)| e)
                .sum();
            let lse_shift = rest.ln_1p();
            losses.push(lse_shift + (max - row[label]));
            let total = 1.0 + rest;
            probs.extend(exps.iter().map(|e| e / total));
        }
        let shape = reduced_shape(t.shape());
        let value = Tensor::new(shape, losses)?;
        let rg = self.rg(logits);
        self.push_checked(
            "softmax_cross_entropy",
            value,
            Op::SoftmaxXent(logits, labels.to_vec(), probs),
            rg,
        )
    }

    /// Accumulates `d loss / d leaf` into every differentiable leaf reachable
    /// from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if !node.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if self.consumed[loss.0] {
            return Err(Error::GraphConsumed);
        }
        self.consumed[loss.0] = true;
        if !node.requires_grad {
            return Ok(());
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(acc) = self.leaf_grads[idx].as_mut() {
                        for (a, d) in acc.iter_mut().zip(&g) {
                            *a += d;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.rg(*a) {
                        // dA = dC · Bᵀ
                        let bv = tb.values();
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let bp = &bv[p * n..(p + 1) * n];
                                da[i * k + p] = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut adj, *a, da);
                    }
                    if self.rg(*b) {
                        // dB = Aᵀ · dC
                        let av = ta.values();
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, y) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                    *o += x * y;
                                }
                            }
                        }
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    let mode = self.broadcast("backward", *a, *b)?;
                    let (va, vb) = (self.nodes[a.0].value.values(), self.nodes[b.0].value.values());
                    let (ga, gb): (Vec<f64>, Vec<f64>) = match &node.op {
                        Op::Add(..) => (g.clone(), g.clone()),
                        Op::Sub(..) => (g.clone(), g.iter().map(|x| -x).collect()),
                        _ => {
                            let ga = g
                                .iter()
                                .enumerate()
                                .map(|(i, x)| x * pick(vb, i, mode, false))
                                .collect();
                            let gb = g
                                .iter()
                                .enumerate()
                                .map(|(i, x)| x * pick(va, i, mode, true))
                                .collect();
                            (ga, gb)
                        }
                    };
                    if self.rg(*a) {
                        let ga = match mode {
                            Broadcast::LeftScalar => vec![ga.iter().sum()],
                            _ => ga,
                        };
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = match mode {
                            Broadcast::RightScalar => vec![gb.iter().sum()],
                            _ => gb,
                        };
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let cols = self.shape(*row)[0];
                        let mut gr = vec![0.0; cols];
                        for (i, x) in g.iter().enumerate() {
                            gr[i % cols] += x;
                        }
                        accumulate(&mut adj, *row, gr);
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let va = self.nodes[a.0].value.values();
                    let ga = g
                        .iter()
                        .zip(va)
                        .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let out = node.value.values();
                    let ga = g.iter().zip(out).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, ga);
                }
                Op::Log(a) => {
                    let va = self.nodes[a.0].value.values();
                    let ga = g.iter().zip(va).map(|(x, v)| x / v).collect();
                    accumulate(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let va = self.nodes[a.0].value.values();
                    let ga = g.iter().zip(va).map(|(x, v)| 2.0 * v * x).collect();
                    accumulate(&mut adj, *a, ga);
                }
                Op::MaxScalar(a, c) => {
                    let va = self.nodes[a.0].value.values();
                    let ga = g
                        .iter()
                        .zip(va)
                        .map(|(x, &v)| if v > *c { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, ga);
                }
                Op::AddScalar(a) => accumulate(&mut adj, *a, g),
                Op::Scale(a, c) => {
                    let ga = g.iter().map(|x| x * c).collect();
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.len();
                    accumulate(&mut adj, *a, vec![g[0]; len]);
                }
                Op::Mean(a) => {
                    let len = self.nodes[a.0].value.len();
                    accumulate(&mut adj, *a, vec![g[0] / len as f64; len]);
                }
                Op::RowNorm(a) => {
                    let ta = &self.nodes[a.0].value;
                    let norms = node.value.values();
                    let cols = ta.cols();
                    let mut ga = vec![0.0; ta.len()];
                    for (i, (&n, &gi)) in norms.iter().zip(&g).enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let row = ta.row(i);
                        for (o, v) in ga[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                            *o = gi * v / n;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Normalize(a, norms) => {
                    // dx = (g - y (y·g)) / ||x||, i.e. (I/n - x xᵀ/n³) g
                    let y = &node.value;
                    let cols = y.cols();
                    let mut ga = vec![0.0; y.len()];
                    for (i, &n) in norms.iter().enumerate() {
                        let yr = y.row(i);
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &yv), &gv) in ga[i * cols..(i + 1) * cols].iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * dot) / n;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let ta = &self.nodes[a.0].value;
                    let cols = ta.cols();
                    let mut ga = vec![0.0; ta.len()];
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, x) in ga[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[k * cols..(k + 1) * cols])
                        {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SoftmaxXent(a, labels, probs) => {
                    let cols = self.nodes[a.0].value.cols();
                    let mut ga = vec![0.0; probs.len()];
                    for (i, (&label, &gi)) in labels.iter().zip(&g).enumerate() {
                        for j in 0..cols {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            ga[i * cols + j] = gi * (probs[i * cols + j] - onehot);
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
            }
        }
        Ok(())
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    match shape.len() {
        0 | 1 => Vec::new(),
        n => shape[..n - 1].to_vec(),
    }
}

fn pick(values: &[f64], i: usize, mode: Broadcast, left: bool) -> f64 {
    match (mode, left) {
        (Broadcast::Same, _) => values[i],
        (Broadcast::LeftScalar, true) | (Broadcast::RightScalar, false) => values[0],
        _ => values[i],
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match adj[v.0].as_mut() {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => adj[v.0] = Some(delta),
    }
}
