//! Building blocks shared by the generator and the discriminators.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::numerics::{sigmoid, ParamId, ParamStore, Tape, Tensor, Var};

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

/// Inverted dropout mask applied to `x`, or `x` itself when `rng` is `None`.
pub(crate) fn dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    rng: Option<&mut (dyn rand::RngCore + '_)>,
) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

/// One attention-weighted message-passing layer:
/// `v_i' = tanh(W v_i + sum_j a_ij W v_j)`, with
/// `a_i. = softmax_j(LeakyReLU(u_self . W v_i + u_nb . W v_j))`.
#[derive(Clone, Debug)]
pub struct GnnLayer {
    pub weight: ParamId,
    pub att_self: ParamId,
    pub att_neighbor: ParamId,
    pub slope: f64,
    pub count_bias: bool,
}

impl GnnLayer {
    pub(crate) fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        slope: f64,
        count_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        GnnLayer {
            weight: store.add(format!("{prefix}.weight"), uniform(rng, &[dim, dim], bound)),
            att_self: store.add(format!("{prefix}.att_self"), uniform(rng, &[dim, 1], bound)),
            att_neighbor: store.add(format!("{prefix}.att_neighbor"), uniform(rng, &[dim, 1], bound)),
            slope,
            count_bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &BipartiteGraph, x: Var) -> Result<Var> {
        let layout = graph.layout();
        let w = tape.param(store, self.weight);
        let us = tape.param(store, self.att_self);
        let un = tape.param(store, self.att_neighbor);
        let xw = tape.matmul(x, w)?;
        if layout.targets.is_empty() {
            return Ok(tape.tanh(xw));
        }
        let s_self = tape.matmul(xw, us)?;
        let s_nb = tape.matmul(xw, un)?;
        let st = tape.gather_rows(s_self, layout.targets.clone())?;
        let sn = tape.gather_rows(s_nb, layout.sources.clone())?;
        let mut logits = tape.add(st, sn)?;
        if self.count_bias {
            let bias = Tensor::column(layout.counts.iter().map(|&c| (1.0 + c as f64).ln()).collect());
            let b = tape.constant(bias);
            logits = tape.add(logits, b)?;
        }
        let logits = tape.leaky_relu(logits, self.slope);
        let att = tape.segment_softmax(logits, layout.offsets.clone())?;
        let msg = tape.gather_rows(xw, layout.sources.clone())?;
        let msg = tape.scale_rows(msg, att)?;
        let agg = tape.segment_sum(msg, layout.offsets.clone())?;
        let pre = tape.add(xw, agg)?;
        Ok(tape.tanh(pre))
    }

    /// Attention of node `i` over `neighbors` (flat node indices) given the
    /// layer's input embeddings, one row per node.
    pub fn attention_weights(
        &self,
        store: &ParamStore,
        inputs: &Tensor,
        i: usize,
        neighbors: &[usize],
        counts: Option<&[u32]>,
    ) -> Result<Vec<f64>> {
        if neighbors.is_empty() {
            return Err(Error::argument("attention over an empty neighbor set"));
        }
        let w = store.value(self.weight);
        let us = store.value(self.att_self).values();
        let un = store.value(self.att_neighbor).values();
        let project = |node: usize| -> Result<Vec<f64>> {
            let row = Tensor::row(inputs.row_slice(node).to_vec());
            Ok(row.matmul(w)?.into_values())
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let self_score = dot(&project(i)?, us);
        let mut logits = Vec::with_capacity(neighbors.len());
        for (k, &j) in neighbors.iter().enumerate() {
            let mut s = self_score + dot(&project(j)?, un);
            if self.count_bias {
                if let Some(c) = counts {
                    s += (1.0 + c[k] as f64).ln();
                }
            }
            logits.push(if s > 0.0 { s } else { self.slope * s });
        }
        crate::numerics::softmax(&logits)
    }
}

/// GRU cell over `1 x d` rows: `h' = (1 - z) * h + z * n`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_candidate: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_candidate: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_candidate: ParamId,
    pub b_hidden: ParamId,
}

impl Gru {
    pub(crate) fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut mat = |name: &str, rng: &mut dyn rand::RngCore| {
            store.add(format!("{prefix}.{name}"), uniform(rng, &[dim, dim], bound))
        };
        let w_update = mat("w_update", rng);
        let w_reset = mat("w_reset", rng);
        let w_candidate = mat("w_candidate", rng);
        let u_update = mat("u_update", rng);
        let u_reset = mat("u_reset", rng);
        let u_candidate = mat("u_candidate", rng);
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[1, dim]));
        Gru {
            w_update,
            w_reset,
            w_candidate,
            u_update,
            u_reset,
            u_candidate,
            b_update: bias("b_update"),
            b_reset: bias("b_reset"),
            b_candidate: bias("b_candidate"),
            b_hidden: bias("b_hidden"),
        }
    }

    fn gate(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
        let w = tape.param(store, w);
        let u = tape.param(store, u);
        let b = tape.param(store, b);
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, x: Var) -> Result<Var> {
        let z = self.gate(tape, store, x, h, self.w_update, self.u_update, self.b_update)?;
        let z = tape.sigmoid(z);
        let r = self.gate(tape, store, x, h, self.w_reset, self.u_reset, self.b_reset)?;
        let r = tape.sigmoid(r);
        let wc = tape.param(store, self.w_candidate);
        let uc = tape.param(store, self.u_candidate);
        let bc = tape.param(store, self.b_candidate);
        let bh = tape.param(store, self.b_hidden);
        let xw = tape.matmul(x, wc)?;
        let xw = tape.add(xw, bc)?;
        let hu = tape.matmul(h, uc)?;
        let hu = tape.add(hu, bh)?;
        let gated = tape.mul(r, hu)?;
        let n = tape.add(xw, gated)?;
        let n = tape.tanh(n);
        let delta = tape.sub(n, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }

    /// Plain evaluation of the same equations, without a tape.
    pub fn eval(&self, store: &ParamStore, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let row = |v: &[f64]| Tensor::row(v.to_vec());
        let lin = |w: ParamId, u: ParamId, b: ParamId| -> Result<Vec<f64>> {
            let a = row(x).matmul(store.value(w))?;
            let c = row(h).matmul(store.value(u))?;
            Ok(a.values()
                .iter()
                .zip(c.values())
                .zip(store.value(b).values())
                .map(|((a, c), b)| a + c + b)
                .collect())
        };
        let z: Vec<f64> = lin(self.w_update, self.u_update, self.b_update)?.into_iter().map(sigmoid).collect();
        let r: Vec<f64> = lin(self.w_reset, self.u_reset, self.b_reset)?.into_iter().map(sigmoid).collect();
        let xw = row(x).matmul(store.value(self.w_candidate))?;
        let hu = row(h).matmul(store.value(self.u_candidate))?;
        let bc = store.value(self.b_candidate).values();
        let bh = store.value(self.b_hidden).values();
        Ok((0..h.len())
            .map(|k| {
                let n = (xw.values()[k] + bc[k] + r[k] * (hu.values()[k] + bh[k])).tanh();
                (1.0 - z[k]) * h[k] + z[k] * n
            })
            .collect())
    }
}

pub(crate) fn arc(v: Vec<usize>) -> Arc<[usize]> {
    v.into()
}
