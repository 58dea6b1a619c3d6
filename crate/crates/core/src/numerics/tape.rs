use std::sync::Arc;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Transpose(Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    ScaleRows(Var, Var),
    SegmentSum(Var, Arc<[usize]>),
    MeanRows(Var),
    SumCols(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Select(Var, Arc<[usize]>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape over dense matrices.
///
/// Every op appends one node; `backward` walks the nodes in reverse. A tape is
/// built per forward pass and dropped afterwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
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

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not backed by a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a + b` with the `1 x d` row `b` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims()?;
        let (br, bc) = self.value(b).dims()?;
        if br != 1 || bc != c {
            return Err(Error::shape(format!("add_row {r}x{c} with {br}x{bc}")));
        }
        let bv = self.value(b).values().to_vec();
        let mut out = self.value(a).values().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, x) in row.iter_mut().zip(&bv) {
                *o += x;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow(a, b), rg))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(&[a]);
        self.push(value, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Rows `a[idx[0]], a[idx[1]], ...` stacked into a new matrix.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.dims()?;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(Error::shape(format!("gather row {i} of {r}")));
            }
            out.extend_from_slice(src.row_slice(i));
        }
        let value = Tensor::matrix(idx.len(), c, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherRows(a, idx), rg))
    }

    /// Softmax of an `E x 1` column within each segment
    /// `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims()?;
        check_segments(r, c, &offsets)?;
        let mut out = vec![0.0; r];
        for w in offsets.windows(2) {
            let seg = &x.values()[w[0]..w[1]];
            if seg.is_empty() {
                continue;
            }
            let m = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out[w[0]..w[1]].iter_mut().zip(seg) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in &mut out[w[0]..w[1]] {
                *o /= z;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::column(out), Op::SegmentSoftmax(a, offsets), rg))
    }

    /// Multiplies row `e` of `a` by the scalar `w[e]` (`w` is `E x 1`).
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims()?;
        let (wr, wc) = self.value(w).dims()?;
        if wr != r || wc != 1 {
            return Err(Error::shape(format!("scale_rows {r}x{c} by {wr}x{wc}")));
        }
        let wv = self.value(w).values();
        let mut out = self.value(a).values().to_vec();
        for (row, &s) in out.chunks_mut(c.max(1)).zip(wv) {
            for o in row {
                *o *= s;
            }
        }
        let rg = self.rg(&[a, w]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::ScaleRows(a, w), rg))
    }

    /// Sums the rows of each segment; output has one row per segment.
    pub fn segment_sum(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims()?;
        if offsets.first() != Some(&0) || offsets.last() != Some(&r) {
            return Err(Error::shape("segment offsets do not cover input"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::shape("segment offsets not monotone"));
        }
        let n = offsets.len() - 1;
        let mut out = vec![0.0; n * c];
        for (s, w) in offsets.windows(2).enumerate() {
            let dst = &mut out[s * c..(s + 1) * c];
            for e in w[0]..w[1] {
                for (o, v) in dst.iter_mut().zip(x.row_slice(e)) {
                    *o += v;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::SegmentSum(a, offsets), rg))
    }

    /// Column-wise mean: `m x d` to `1 x d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims()?;
        if r == 0 {
            return Err(Error::shape("mean of zero rows"));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), rg))
    }

    /// Row sums: `n x c` to `n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, _) = x.dims()?;
        let out = (0..r).map(|i| x.row_slice(i).iter().sum()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::column(out), Op::SumCols(a), rg))
    }

    /// Numerically stable row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims()?;
        if c == 0 {
            return Err(Error::shape("log-softmax over zero columns"));
        }
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let mut out = x.values().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::LogSoftmaxRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Picks flat (row-major) positions of `a` into a `k x 1` column.
    pub fn select(&mut self, a: Var, flat: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        let n = x.len();
        let mut out = Vec::with_capacity(flat.len());
        for &i in flat.iter() {
            if i >= n {
                return Err(Error::shape(format!("select index {i} of {n}")));
            }
            out.push(x.values()[i]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::column(out), Op::Select(a, flat), rg))
    }

    /// Sign pattern of every LeakyReLU input on the tape. Finite-difference
    /// checks compare these to detect perturbations that straddle the kink.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _) = node.op {
                sig.extend(self.value(a).values().iter().map(|&v| v > 0.0));
            }
        }
        sig
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates d(loss)/d(param) into the store's gradient slots. Every
    /// parameter placed on this tape gets a slot, zero if it is unreachable.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                match &grads.grads[i] {
                    Some(g) => store.accumulate_grad(id, g)?,
                    None => store.accumulate_grad(id, &Tensor::zeros(node.value.shape()))?,
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |v: Var, d: Tensor, grads: &mut [Option<Tensor>]| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d)?,
                slot @ None => *slot = Some(d),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    send(*a, g.matmul(&val(*b).transpose()?)?, grads)?;
                }
                if self.requires_grad(*b) {
                    send(*b, val(*a).transpose()?.matmul(g)?, grads)?;
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), grads)?;
                send(*b, g.clone(), grads)?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads)?;
                send(*b, g.map(|x| -x), grads)?;
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    send(*a, g.zip_map(val(*b), |x, y| x * y)?, grads)?;
                }
                if self.requires_grad(*b) {
                    send(*b, g.zip_map(val(*a), |x, y| x * y)?, grads)?;
                }
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone(), grads)?;
                if self.requires_grad(*b) {
                    let (r, c) = g.dims()?;
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for (d, x) in db.iter_mut().zip(g.row_slice(i)) {
                            *d += x;
                        }
                    }
                    send(*b, Tensor::row(db), grads)?;
                }
            }
            Op::Affine(a, s) => send(*a, g.map(|x| s * x), grads)?,
            Op::Tanh(a) => send(*a, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))?, grads)?,
            Op::Sigmoid(a) => {
                send(*a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))?, grads)?
            }
            Op::LeakyRelu(a, slope) => send(
                *a,
                g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { slope * d })?,
                grads,
            )?,
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |d, y| d * y)?, grads)?,
            Op::Transpose(a) => send(*a, g.transpose()?, grads)?,
            Op::GatherRows(a, idx) => {
                let src = val(*a);
                let (r, c) = src.dims()?;
                let mut da = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for (d, x) in da[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *d += x;
                    }
                }
                send(*a, Tensor::new(src.shape().to_vec(), da)?, grads)?;
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = node.value.values();
                let dy = g.values();
                let mut dx = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    let dot: f64 = (w[0]..w[1]).map(|e| y[e] * dy[e]).sum();
                    for e in w[0]..w[1] {
                        dx[e] = y[e] * (dy[e] - dot);
                    }
                }
                send(*a, Tensor::new(val(*a).shape().to_vec(), dx)?, grads)?;
            }
            Op::ScaleRows(a, w) => {
                let (r, c) = g.dims()?;
                let wv = val(*w).values();
                if self.requires_grad(*a) {
                    let mut da = g.values().to_vec();
                    for (row, &s) in da.chunks_mut(c.max(1)).zip(wv) {
                        for d in row {
                            *d *= s;
                        }
                    }
                    send(*a, Tensor::matrix(r, c, da)?, grads)?;
                }
                if self.requires_grad(*w) {
                    let av = val(*a);
                    let dw = (0..r)
                        .map(|i| {
                            g.row_slice(i)
                                .iter()
                                .zip(av.row_slice(i))
                                .map(|(x, y)| x * y)
                                .sum()
                        })
                        .collect();
                    send(*w, Tensor::column(dw), grads)?;
                }
            }
            Op::SegmentSum(a, offsets) => {
                let (r, c) = val(*a).dims()?;
                let mut da = vec![0.0; r * c];
                for (s, w) in offsets.windows(2).enumerate() {
                    for e in w[0]..w[1] {
                        da[e * c..(e + 1) * c].copy_from_slice(g.row_slice(s));
                    }
                }
                send(*a, Tensor::matrix(r, c, da)?, grads)?;
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).dims()?;
                let mut da = Vec::with_capacity(r * c);
                for _ in 0..r {
                    da.extend(g.values().iter().map(|x| x / r as f64));
                }
                send(*a, Tensor::matrix(r, c, da)?, grads)?;
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).dims()?;
                let mut da = Vec::with_capacity(r * c);
                for &x in g.values() {
                    da.extend(std::iter::repeat_n(x, c));
                }
                send(*a, Tensor::matrix(r, c, da)?, grads)?;
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = node.value.dims()?;
                let y = node.value.values();
                let dy = g.values();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let total: f64 = dy[row.clone()].iter().sum();
                    for j in row {
                        dx[j] = dy[j] - y[j].exp() * total;
                    }
                }
                send(*a, Tensor::matrix(r, c, dx)?, grads)?;
            }
            Op::Sum(a) => {
                let s = g.item()?;
                send(*a, Tensor::full(val(*a).shape(), s), grads)?;
            }
            Op::Select(a, flat) => {
                let src = val(*a);
                let mut da = vec![0.0; src.len()];
                for (k, &i) in flat.iter().enumerate() {
                    da[i] += g.values()[k];
                }
                send(*a, Tensor::new(src.shape().to_vec(), da)?, grads)?;
            }
        }
        Ok(())
    }
}

fn check_segments(r: usize, c: usize, offsets: &[usize]) -> Result<()> {
    if c != 1 {
        return Err(Error::shape(format!("segment softmax needs a column, got {r}x{c}")));
    }
    if offsets.is_empty() || *offsets.last().unwrap() != r || offsets[0] != 0 {
        return Err(Error::shape("segment offsets do not cover input"));
    }
    if offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::shape("segment offsets not monotone"));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
