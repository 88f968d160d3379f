use super::kernels::{matmul_into, Transpose};
use super::{Tensor, LOG_FLOOR};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, bool),
    Sub(Var, Var, bool),
    Mul(Var, Var, bool),
    Div(Var, Var, bool),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    Sqrt(Var),
    Scale(Var, f32),
    Offset(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    ConcatCols(Var, Var),
    LogSoftmax(Var),
    PickCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
///
/// Nodes are stored in recording order, which is a topological order, and
/// [`Tape::backward`] walks them once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if it lies on a path from a
    /// trainable leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    /// Records a constant input. No gradient is produced for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies the current value of `v` into a new constant, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---------------------------------------------------------------- matmul

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
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            Transpose::No,
            self.value(b).data(),
            Transpose::No,
            &mut out,
            m,
            k,
            n,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    // ---------------------------------------------------------- elementwise

    /// `true` when `rhs` is broadcast across the rows of `lhs`.
    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(false);
        }
        let last = sa.last().copied();
        let row_vector = match sb {
            [n] => Some(*n),
            [1, n] => Some(*n),
            _ => None,
        };
        if sa.len() >= 2 && row_vector.is_some() && row_vector == last {
            return Ok(true);
        }
        Err(Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: impl FnOnce(bool) -> Op,
    ) -> Result<Var> {
        let bc = self.broadcast(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b).data();
        let data: Vec<f32> = if bc {
            let n = vb.len();
            va.data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(vb).map(|(&x, &y)| f(x, y)))
                .collect()
        } else {
            va.data().iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op(bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |bc| Op::Add(a, b, bc))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |bc| Op::Sub(a, b, bc))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |bc| Op::Mul(a, b, bc))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, |bc| Op::Div(a, b, bc))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f32::exp, Op::Exp(a))
    }

    fn check_nonnegative(&self, op: &'static str, a: Var) -> Result<()> {
        if let Some(bad) = self
            .value(a)
            .data()
            .iter()
            .find(|v| !(**v >= 0.0) || v.is_infinite())
        {
            return Err(Error::Domain {
                op,
                detail: format!("argument {bad} outside [0, inf)"),
            });
        }
        Ok(())
    }

    /// Natural log; arguments below [`LOG_FLOOR`] are clamped to it.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check_nonnegative("log", a)?;
        Ok(self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a)))
    }

    /// Square root; arguments below [`LOG_FLOOR`] are clamped to it.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check_nonnegative("sqrt", a)?;
        Ok(self.unary(a, |x| x.max(LOG_FLOOR).sqrt(), Op::Sqrt(a)))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f32::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    // ------------------------------------------------------------ reductions

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let t = self.value(a);
        let value = match axis {
            None => {
                let s: f32 = t.data().iter().sum();
                Tensor::scalar(if mean { s / t.len().max(1) as f32 } else { s })
            }
            Some(ax) => {
                let (outer, len, inner) = split_axis(t.shape(), ax)?;
                let mut out = vec![0.0; outer * inner];
                let d = t.data();
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                if mean && len > 0 {
                    let inv = 1.0 / len as f32;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut shape = t.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, out)?
            }
        };
        let op = if mean {
            Op::Mean(a, axis)
        } else {
            Op::Sum(a, axis)
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, op, rg))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    // ------------------------------------------------------- structural ops

    /// Concatenates two matrices along columns: `[m,p] ++ [m,q] -> [m,p+q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, p, q) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&va[i * p..(i + 1) * p]);
            data.extend_from_slice(&vb[i * q..(i + 1) * q]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![m, p + q], data)?,
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::Shape {
                op: "log_softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let k = t.shape()[1];
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(k) {
            let lse = logsumexp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || t.shape()[0] != idx.len() {
            return Err(Error::Shape {
                op: "pick_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let k = t.shape()[1];
        if let Some(&bad) = idx.iter().find(|&&j| j >= k) {
            return Err(Error::Input(format!("column index {bad} >= {k}")));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| t.data()[i * k + j])
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::vector(data),
            Op::PickCols(a, idx.to_vec()),
            rg,
        ))
    }

    /// `out[i, :] = a[idx[i], :]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Input(format!("row index {bad} >= {}", t.rows())));
        }
        let value = t.select_rows(idx);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Per-segment row means: `out[k, :] = mean{ a[i, :] : seg[i] == k }`.
    /// Empty segments produce zero rows and receive no gradient.
    pub fn segment_mean(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || t.shape()[0] != seg.len() {
            return Err(Error::Shape {
                op: "segment_mean",
                lhs: t.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        if let Some(&bad) = seg.iter().find(|&&k| k >= n_segments) {
            return Err(Error::Input(format!(
                "segment id {bad} >= {n_segments}"
            )));
        }
        let d = t.shape()[1];
        let mut counts = vec![0usize; n_segments];
        let mut out = vec![0.0; n_segments * d];
        for (i, &k) in seg.iter().enumerate() {
            counts[k] += 1;
            for (o, v) in out[k * d..(k + 1) * d].iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f32;
                out[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= inv);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![n_segments, d], out)?,
            Op::SegmentMean(a, seg.to_vec(), counts),
            rg,
        ))
    }

    // --------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every node visited receives `d loss / d node`; trainable leaves are
    /// the ones callers usually read. Gradients accumulate additively when a
    /// value is used more than once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let seed_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(Tensor::full(&seed_shape, 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        f: impl FnOnce() -> Result<Tensor>,
    ) -> Result<()> {
        if self.nodes[v.0].requires_grad {
            let g = f()?;
            self.accumulate(grads, v, g);
        }
        Ok(())
    }

    /// Gradient for the right operand of a possibly row-broadcast binary op.
    fn rhs_grad(&self, b: Var, bc: bool, per_elem: Vec<f32>) -> Result<Tensor> {
        let shape = self.shape(b).to_vec();
        if !bc {
            return Tensor::new(shape, per_elem);
        }
        let n = self.value(b).len();
        let mut out = vec![0.0; n];
        for row in per_elem.chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::new(shape, out)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                self.accumulate_with(grads, *a, || {
                    let mut ga = vec![0.0; m * k];
                    matmul_into(gd, Transpose::No, vb.data(), Transpose::Yes, &mut ga, m, n, k, 0.0);
                    Tensor::new(vec![m, k], ga)
                })?;
                self.accumulate_with(grads, *b, || {
                    let mut gb = vec![0.0; k * n];
                    matmul_into(va.data(), Transpose::Yes, gd, Transpose::No, &mut gb, k, m, n, 0.0);
                    Tensor::new(vec![k, n], gb)
                })?;
            }
            Op::Add(a, b, bc) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *b, || self.rhs_grad(*b, *bc, gd.to_vec()))?;
            }
            Op::Sub(a, b, bc) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *b, || {
                    self.rhs_grad(*b, *bc, gd.iter().map(|v| -v).collect())
                })?;
            }
            Op::Mul(a, b, bc) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let nb = vb.len();
                let bval = |j: usize| if *bc { vb[j % nb] } else { vb[j] };
                self.accumulate_with(grads, *a, || {
                    let d = gd.iter().enumerate().map(|(j, g)| g * bval(j)).collect();
                    Tensor::new(out.shape().to_vec(), d)
                })?;
                self.accumulate_with(grads, *b, || {
                    self.rhs_grad(*b, *bc, gd.iter().zip(va).map(|(g, x)| g * x).collect())
                })?;
            }
            Op::Div(a, b, bc) => {
                let vb = self.value(*b).data();
                let nb = vb.len();
                let bval = |j: usize| if *bc { vb[j % nb] } else { vb[j] };
                self.accumulate_with(grads, *a, || {
                    let d = gd.iter().enumerate().map(|(j, g)| g / bval(j)).collect();
                    Tensor::new(out.shape().to_vec(), d)
                })?;
                self.accumulate_with(grads, *b, || {
                    // d(a/b)/db = -(a/b)/b
                    let d = gd
                        .iter()
                        .zip(out.data())
                        .enumerate()
                        .map(|(j, (g, q))| -g * q / bval(j))
                        .collect();
                    self.rhs_grad(*b, *bc, d)
                })?;
            }
            Op::Neg(a) => self.pointwise(grads, *a, g, out, |_, _| -1.0),
            Op::Exp(a) => self.pointwise(grads, *a, g, out, |_, y| y),
            Op::Log(a) => self.pointwise(grads, *a, g, out, |x, _| {
                if x >= LOG_FLOOR {
                    1.0 / x
                } else {
                    0.0
                }
            }),
            Op::Sqrt(a) => self.pointwise(grads, *a, g, out, |x, y| {
                if x >= LOG_FLOOR {
                    0.5 / y
                } else {
                    0.0
                }
            }),
            Op::Softplus(a) => self.pointwise(grads, *a, g, out, |x, _| sigmoid(x)),
            Op::Sigmoid(a) => self.pointwise(grads, *a, g, out, |_, y| y * (1.0 - y)),
            Op::Relu(a) => self.pointwise(grads, *a, g, out, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Tanh(a) => self.pointwise(grads, *a, g, out, |_, y| 1.0 - y * y),
            Op::Square(a) => self.pointwise(grads, *a, g, out, |x, _| 2.0 * x),
            Op::Scale(a, c) => {
                let c = *c;
                self.pointwise(grads, *a, g, out, move |_, _| c)
            }
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let mean = matches!(node.op, Op::Mean(..));
                let src = self.value(*a);
                let d = match axis {
                    None => {
                        let s = if mean { gd[0] / src.len().max(1) as f32 } else { gd[0] };
                        vec![s; src.len()]
                    }
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(src.shape(), *ax)?;
                        let scale = if mean { 1.0 / len.max(1) as f32 } else { 1.0 };
                        let mut d = vec![0.0; src.len()];
                        for o in 0..outer {
                            let gsrc = &gd[o * inner..(o + 1) * inner];
                            for l in 0..len {
                                let dst = &mut d[(o * len + l) * inner..(o * len + l + 1) * inner];
                                for (x, gv) in dst.iter_mut().zip(gsrc) {
                                    *x = gv * scale;
                                }
                            }
                        }
                        d
                    }
                };
                self.accumulate(grads, *a, Tensor::new(src.shape().to_vec(), d)?);
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.shape(*a)[1], self.shape(*b)[1]);
                let m = out.shape()[0];
                self.accumulate_with(grads, *a, || {
                    let mut d = Vec::with_capacity(m * p);
                    for r in 0..m {
                        d.extend_from_slice(&gd[r * (p + q)..r * (p + q) + p]);
                    }
                    Tensor::new(vec![m, p], d)
                })?;
                self.accumulate_with(grads, *b, || {
                    let mut d = Vec::with_capacity(m * q);
                    for r in 0..m {
                        d.extend_from_slice(&gd[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                    Tensor::new(vec![m, q], d)
                })?;
            }
            Op::LogSoftmax(a) => {
                let k = out.shape()[1];
                let mut d = vec![0.0; out.len()];
                for ((drow, grow), yrow) in d
                    .chunks_mut(k)
                    .zip(gd.chunks(k))
                    .zip(out.data().chunks(k))
                {
                    let gsum: f32 = grow.iter().sum();
                    for j in 0..k {
                        drow[j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::PickCols(a, idx) => {
                let shape = self.shape(*a).to_vec();
                let k = shape[1];
                let mut d = vec![0.0; shape[0] * k];
                for (r, &j) in idx.iter().enumerate() {
                    d[r * k + j] = gd[r];
                }
                self.accumulate(grads, *a, Tensor::new(shape, d)?);
            }
            Op::GatherRows(a, idx) => {
                let shape = self.shape(*a).to_vec();
                let c = shape[1];
                let mut d = vec![0.0; shape[0] * c];
                for (r, &src) in idx.iter().enumerate() {
                    for (x, gv) in d[src * c..(src + 1) * c].iter_mut().zip(&gd[r * c..(r + 1) * c]) {
                        *x += gv;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(shape, d)?);
            }
            Op::SegmentMean(a, seg, counts) => {
                let shape = self.shape(*a).to_vec();
                let c = shape[1];
                let mut d = vec![0.0; shape[0] * c];
                for (r, &k) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[k] as f32;
                    for (x, gv) in d[r * c..(r + 1) * c].iter_mut().zip(&gd[k * c..(k + 1) * c]) {
                        *x = gv * inv;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(shape, d)?);
            }
        }
        Ok(())
    }

    /// Unary VJP: `da = g * f'(x, y)` where `y` is the node's output.
    fn pointwise(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        g: &Tensor,
        y: &Tensor,
        deriv: impl Fn(f32, f32) -> f32,
    ) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let x = self.value(a);
        let d: Vec<f32> = g
            .data()
            .iter()
            .zip(x.data())
            .zip(y.data())
            .map(|((gv, &xv), &yv)| gv * deriv(xv, yv))
            .collect();
        let t = Tensor::new(x.shape().to_vec(), d).expect("unary grad shape");
        self.accumulate(grads, a, t);
    }
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(xs: &[f32]) -> f32 {
    let m = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f32>().ln()
}
