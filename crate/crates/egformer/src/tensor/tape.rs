//! The recording tape: forward ops, backward closures, MAC counting.
//!
//! Every op validates shapes, computes the result with a plain kernel, and
//! records a backward closure when at least one input is attached to the
//! tape. Node ids are handed out in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep that
//! visits each node exactly once.

use super::{strides, Tensor};
use crate::error::{Error, Result};
use std::cell::{Cell, RefCell};
use std::sync::Arc;

pub type NodeId = usize;

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    /// One slot per op input; `None` for inputs that are not attached.
    parents: Vec<Option<NodeId>>,
    /// Gradients w.r.t. each input, aligned with `parents`.
    backward: BackFn,
}

/// Gradient table produced by [`Tape::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `t`, if `t` is attached and was reached.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        t.node().and_then(|id| self.grads.get(id).cloned().flatten())
    }

    /// Like [`Gradients::get`] but unreached leaves get a zero gradient.
    pub fn get_or_zeros(&self, t: &Tensor) -> Tensor {
        self.get(t).unwrap_or_else(|| Tensor::zeros(t.shape()))
    }
}

/// Single-writer op recorder owning the multiply-accumulate counters.
///
/// `macs` counts every matrix product and linear projection executed through
/// this tape; `attention_macs` is the slice of that total attributed to
/// window-attention pipelines (the four channel projections plus the two
/// window matrix products per MSA).
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    macs: Cell<u64>,
    attention_macs: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: RefCell::new(Vec::new()), macs: Cell::new(0), attention_macs: Cell::new(0) }
    }

    /// Multiply-accumulate count of all matmul/linear ops so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    /// MACs attributed to attention pipelines (see [`Tape`] docs).
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs.get()
    }

    /// Reset both counters. Only call at a counting-scope boundary.
    pub fn reset_macs(&self) {
        self.macs.set(0);
        self.attention_macs.set(0);
    }

    pub(crate) fn add_attention_macs(&self, delta: u64) {
        self.attention_macs.set(self.attention_macs.get() + delta);
    }

    fn count_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// Register a differentiable leaf. Returns a tensor sharing the data.
    pub fn var(&self, t: &Tensor) -> Tensor {
        let id = self.push(Node { parents: vec![], backward: Box::new(|_| vec![]) });
        t.clone().with_node(id)
    }

    fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn record(
        &self,
        inputs: &[&Tensor],
        out: Tensor,
        back: impl Fn(&Tensor) -> Vec<Tensor> + 'static,
    ) -> Tensor {
        if inputs.iter().all(|t| t.node().is_none()) {
            return out;
        }
        let parents = inputs.iter().map(|t| t.node()).collect();
        let id = self.push(Node { parents, backward: Box::new(back) });
        out.with_node(id)
    }

    /// Public hook for ops defined outside this module: records a unary node
    /// whose backward is `back(grad_out) -> grad_in`.
    pub fn record_custom_unary(
        &self,
        input: &Tensor,
        out: Tensor,
        back: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Tensor {
        self.record(&[input], out, move |g| vec![back(g)])
    }

    /// Reverse sweep from a scalar loss. Gradients are defined for every
    /// attached leaf reachable from the loss; ask [`Gradients::get_or_zeros`]
    /// for the rest.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let loss_id = loss
            .node()
            .ok_or_else(|| Error::Argument("loss is not attached to the tape".into()))?;
        if loss.numel() != 1 {
            return Err(Error::Argument(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss_id] = Some(Tensor::ones(loss.shape()));
        for id in (0..=loss_id).rev() {
            if nodes[id].parents.is_empty() {
                continue; // leaf: keep its accumulated gradient
            }
            let Some(g) = grads[id].take() else { continue };
            let parent_grads = (nodes[id].backward)(&g);
            debug_assert_eq!(parent_grads.len(), nodes[id].parents.len());
            for (pg, pid) in parent_grads.into_iter().zip(&nodes[id].parents) {
                if let Some(pid) = pid {
                    grads[*pid] = Some(match grads[*pid].take() {
                        Some(prev) => add_values(&prev, &pg),
                        None => pg,
                    });
                }
            }
        }
        drop(nodes);
        Ok(Gradients { grads })
    }

    // ---- elementwise binary ----------------------------------------------

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "add")?;
        let out = Tensor::from_vec(a.shape(), ew2(a.data(), b.data(), |x, y| x + y))?;
        Ok(self.record(&[a, b], out, |g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "sub")?;
        let out = Tensor::from_vec(a.shape(), ew2(a.data(), b.data(), |x, y| x - y))?;
        Ok(self.record(&[a, b], out, |g| {
            vec![g.clone(), map_values(g, |x| -x)]
        }))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "mul")?;
        let out = Tensor::from_vec(a.shape(), ew2(a.data(), b.data(), |x, y| x * y))?;
        let (ad, bd) = (a.clone(), b.clone());
        Ok(self.record(&[a, b], out, move |g| {
            vec![mul_values(g, &bd), mul_values(g, &ad)]
        }))
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "div")?;
        let out = Tensor::from_vec(a.shape(), ew2(a.data(), b.data(), |x, y| x / y))?;
        let (ad, bd) = (a.clone(), b.clone());
        Ok(self.record(&[a, b], out, move |g| {
            let da = ew2(g.data(), bd.data(), |gv, y| gv / y);
            let db = g
                .data()
                .iter()
                .zip(ad.data())
                .zip(bd.data())
                .map(|((&gv, &x), &y)| -gv * x / (y * y))
                .collect();
            vec![
                Tensor::from_vec(gd_shape(g), da).unwrap(),
                Tensor::from_vec(gd_shape(g), db).unwrap(),
            ]
        }))
    }

    // ---- elementwise unary -----------------------------------------------

    pub fn add_scalar(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), |v| v + c))?;
        Ok(self.record(&[x], out, |g| vec![g.clone()]))
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), |v| v * c))?;
        Ok(self.record(&[x], out, move |g| vec![map_values(g, |v| v * c)]))
    }

    pub fn neg(&self, x: &Tensor) -> Result<Tensor> {
        self.scale(x, -1.0)
    }

    /// mul·x + add in one pass.
    pub fn affine(&self, x: &Tensor, mul: f64, add: f64) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), |v| mul * v + add))?;
        Ok(self.record(&[x], out, move |g| vec![map_values(g, |v| v * mul)]))
    }

    pub fn abs(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), f64::abs))?;
        let xd = x.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(
                gd_shape(g),
                ew2(g.data(), xd.data(), |gv, v| gv * sign_of(v)),
            )
            .unwrap()]
        }))
    }

    /// sign(x) with sign(0) = 0. Piecewise constant, so its gradient is zero
    /// everywhere it is defined.
    pub fn sign(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), sign_of))?;
        Ok(self.record(&[x], out, |g| vec![Tensor::zeros(gd_shape(g))]))
    }

    pub fn sin(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), f64::sin))?;
        let xd = x.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(gd_shape(g), ew2(g.data(), xd.data(), |gv, v| gv * v.cos()))
                .unwrap()]
        }))
    }

    pub fn cos(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), f64::cos))?;
        let xd = x.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(gd_shape(g), ew2(g.data(), xd.data(), |gv, v| gv * -v.sin()))
                .unwrap()]
        }))
    }

    pub fn sqrt(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), f64::sqrt))?;
        let yd = out.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(gd_shape(g), ew2(g.data(), yd.data(), |gv, y| gv * 0.5 / y))
                .unwrap()]
        }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), gelu_fwd))?;
        let xd = x.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(gd_shape(g), ew2(g.data(), xd.data(), |gv, v| gv * gelu_der(v)))
                .unwrap()]
        }))
    }

    /// Numerically stable softplus ln(1 + e^x).
    pub fn softplus(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), softplus_fwd))?;
        let xd = x.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(
                gd_shape(g),
                ew2(g.data(), xd.data(), |gv, v| gv * sigmoid(v)),
            )
            .unwrap()]
        }))
    }

    /// max(x, c). Gradient passes only where x > c.
    pub fn clamp_min(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let out = Tensor::from_vec(x.shape(), ew1(x.data(), |v| v.max(c)))?;
        let xd = x.clone();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor::from_vec(
                gd_shape(g),
                ew2(g.data(), xd.data(), |gv, v| if v > c { gv } else { 0.0 }),
            )
            .unwrap()]
        }))
    }

    /// Identity with gradients blocked.
    pub fn detach(&self, x: &Tensor) -> Tensor {
        x.detached()
    }

    // ---- matrix products --------------------------------------------------

    /// Batched matrix product: [..B, m, k] × [..B, k, n] -> [..B, m, n].
    /// Batch extents must match exactly. Counts batch·m·n·k MACs.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, br) = (a.rank(), b.rank());
        if ar < 2 || br < 2 || ar != br {
            return Err(Error::Argument(format!(
                "matmul wants equal-rank >= 2 operands, got {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
        let (kb, n) = (b.shape()[br - 2], b.shape()[br - 1]);
        if k != kb || a.shape()[..ar - 2] != b.shape()[..br - 2] {
            return Err(Error::Argument(format!(
                "matmul shape mismatch: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let batch: usize = a.shape()[..ar - 2].iter().product();
        self.count_macs((batch * m * n * k) as u64);

        let data = matmul_nn(a.data(), b.data(), batch, m, k, n);
        let mut out_shape = a.shape()[..ar - 2].to_vec();
        out_shape.extend([m, n]);
        let out = Tensor::from_vec(&out_shape, data)?;

        let (ad, bd) = (a.clone(), b.clone());
        Ok(self.record(&[a, b], out, move |g| {
            // dA = g · Bᵀ ; dB = Aᵀ · g
            let da = matmul_nt(g.data(), bd.data(), batch, m, n, k);
            let db = matmul_tn(ad.data(), g.data(), batch, m, k, n);
            vec![
                Tensor::from_vec(ad.shape(), da).unwrap(),
                Tensor::from_vec(bd.shape(), db).unwrap(),
            ]
        }))
    }

    /// Affine map on the last axis: [.., d_in] × [d_in, d_out] + [d_out].
    /// Counts rows·d_in·d_out MACs.
    pub fn linear(&self, x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if weight.rank() != 2 || bias.rank() != 1 {
            return Err(Error::Argument("linear wants 2-d weight and 1-d bias".into()));
        }
        let d_in = *x.shape().last().ok_or_else(|| Error::Argument("linear on 0-rank".into()))?;
        let (wi, d_out) = (weight.shape()[0], weight.shape()[1]);
        if wi != d_in || bias.shape()[0] != d_out {
            return Err(Error::Argument(format!(
                "linear shape mismatch: x {:?}, weight {:?}, bias {:?}",
                x.shape(),
                weight.shape(),
                bias.shape()
            )));
        }
        let rows = x.numel() / d_in;
        self.count_macs((rows * d_in * d_out) as u64);

        let data = linear_fwd(x.data(), weight.data(), bias.data(), rows, d_in, d_out);
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let out = Tensor::from_vec(&out_shape, data)?;

        let (xd, wd) = (x.clone(), weight.clone());
        Ok(self.record(&[x, weight, bias], out, move |g| {
            let dx = matmul_nt(g.data(), wd.data(), 1, rows, d_out, d_in);
            let dw = matmul_tn(xd.data(), g.data(), 1, rows, d_in, d_out);
            let mut db = vec![0.0; d_out];
            for r in 0..rows {
                let grow = &g.data()[r * d_out..][..d_out];
                for (acc, &gv) in db.iter_mut().zip(grow) {
                    *acc += gv;
                }
            }
            vec![
                Tensor::from_vec(xd.shape(), dx).unwrap(),
                Tensor::from_vec(wd.shape(), dw).unwrap(),
                Tensor::from_vec(&[d_out], db).unwrap(),
            ]
        }))
    }

    /// Layer normalization over the last axis with affine (gamma, beta).
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let c = *x.shape().last().ok_or_else(|| Error::Argument("layer_norm on 0-rank".into()))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::Argument(format!(
                "layer_norm affine shapes {:?}/{:?} do not match channel {c}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let rows = x.numel() / c;
        let mut out = vec![0.0; x.numel()];
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xin = &x.data()[r * c..][..c];
            let mean = xin.iter().sum::<f64>() / c as f64;
            let var = xin.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for i in 0..c {
                let h = (xin[i] - mean) * inv;
                xhat[r * c + i] = h;
                out[r * c + i] = gamma.data()[i] * h + beta.data()[i];
            }
        }
        let out = Tensor::from_vec(x.shape(), out)?;
        let (xhat, inv_std) = (Arc::new(xhat), Arc::new(inv_std));
        let (xd, gd) = (x.clone(), gamma.clone());
        Ok(self.record(&[x, gamma, beta], out, move |g| {
            let gv = g.data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut dx = vec![0.0; xd.numel()];
            for r in 0..rows {
                let base = r * c;
                let mut mean_dh = 0.0;
                let mut mean_dh_h = 0.0;
                for i in 0..c {
                    let go = gv[base + i];
                    let h = xhat[base + i];
                    dgamma[i] += go * h;
                    dbeta[i] += go;
                    let dh = go * gd.data()[i];
                    mean_dh += dh;
                    mean_dh_h += dh * h;
                }
                mean_dh /= c as f64;
                mean_dh_h /= c as f64;
                let inv = inv_std[r];
                for i in 0..c {
                    let dh = gv[base + i] * gd.data()[i];
                    dx[base + i] = inv * (dh - mean_dh - xhat[base + i] * mean_dh_h);
                }
            }
            vec![
                Tensor::from_vec(xd.shape(), dx).unwrap(),
                Tensor::from_vec(&[c], dgamma).unwrap(),
                Tensor::from_vec(&[c], dbeta).unwrap(),
            ]
        }))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum_axes(&self, x: &Tensor, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.reduce_sum_like(x, axes, keepdim, 1.0)
    }

    pub fn mean_axes(&self, x: &Tensor, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        let count: usize = axes_count(x.shape(), axes)?;
        self.reduce_sum_like(x, axes, keepdim, 1.0 / count as f64)
    }

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..x.rank()).collect();
        self.sum_axes(x, &axes, false)
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..x.rank()).collect();
        self.mean_axes(x, &axes, false)
    }

    fn reduce_sum_like(
        &self,
        x: &Tensor,
        axes: &[usize],
        keepdim: bool,
        scale: f64,
    ) -> Result<Tensor> {
        let (kd_shape, out_stride) = reduce_prep(x.shape(), axes)?;
        let kd_numel: usize = kd_shape.iter().product();
        let mut acc = vec![0.0; kd_numel];
        for_each_mapped(x.shape(), &out_stride, |inf, of| acc[of] += x.data()[inf]);
        if scale != 1.0 {
            for v in &mut acc {
                *v *= scale;
            }
        }
        let final_shape = finalize_shape(&kd_shape, x.shape(), axes, keepdim);
        let out = Tensor::from_vec(&final_shape, acc)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(&[x], out, move |g| {
            let mut dx = vec![0.0; in_shape.iter().product()];
            for_each_mapped(&in_shape, &out_stride, |inf, of| dx[inf] = g.data()[of] * scale);
            vec![Tensor::from_vec(&in_shape, dx).unwrap()]
        }))
    }

    /// Max over axes; the gradient goes to the first arg-max of each slice.
    pub fn max_axes(&self, x: &Tensor, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        let (kd_shape, out_stride) = reduce_prep(x.shape(), axes)?;
        let kd_numel: usize = kd_shape.iter().product();
        let mut best = vec![f64::NEG_INFINITY; kd_numel];
        let mut arg = vec![0usize; kd_numel];
        for_each_mapped(x.shape(), &out_stride, |inf, of| {
            let v = x.data()[inf];
            if v > best[of] {
                best[of] = v;
                arg[of] = inf;
            }
        });
        let final_shape = finalize_shape(&kd_shape, x.shape(), axes, keepdim);
        let out = Tensor::from_vec(&final_shape, best)?;
        let arg = Arc::new(arg);
        let in_shape = x.shape().to_vec();
        Ok(self.record(&[x], out, move |g| {
            let mut dx = vec![0.0; in_shape.iter().product()];
            for (of, &inf) in arg.iter().enumerate() {
                dx[inf] += g.data()[of];
            }
            vec![Tensor::from_vec(&in_shape, dx).unwrap()]
        }))
    }

    pub fn max_all(&self, x: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..x.rank()).collect();
        self.max_axes(x, &axes, false)
    }

    // ---- shape ops ---------------------------------------------------------

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "cannot reshape {:?} to {shape:?}",
                x.shape()
            )));
        }
        let out = Tensor { shape: shape.to_vec(), data: x.data_arc(), node: None };
        let in_shape = x.shape().to_vec();
        Ok(self.record(&[x], out, move |g| {
            vec![Tensor { shape: in_shape.clone(), data: g.data_arc(), node: None }]
        }))
    }

    /// Permute axes: out dim p takes input dim `axes[p]`.
    pub fn permute(&self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Argument(format!(
                "invalid permutation {axes:?} for rank {rank}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
        let data = permute_data(x.data(), x.shape(), axes, &out_shape);
        let out = Tensor::from_vec(&out_shape, data)?;
        let inverse: Vec<usize> = {
            let mut inv = vec![0usize; rank];
            for (p, &a) in axes.iter().enumerate() {
                inv[a] = p;
            }
            inv
        };
        let in_shape = x.shape().to_vec();
        Ok(self.record(&[x], out, move |g| {
            let gd = permute_data(g.data(), gd_shape(g), &inverse, &in_shape);
            vec![Tensor::from_vec(&in_shape, gd).unwrap()]
        }))
    }

    /// Broadcast extent-1 axes up to `shape` (same rank).
    pub fn expand(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.len() != x.rank()
            || x.shape().iter().zip(shape).any(|(&i, &o)| i != o && i != 1)
        {
            return Err(Error::Argument(format!(
                "cannot expand {:?} to {shape:?}",
                x.shape()
            )));
        }
        let in_strides = strides(x.shape());
        let map: Vec<usize> = x
            .shape()
            .iter()
            .zip(&in_strides)
            .map(|(&ext, &st)| if ext == 1 { 0 } else { st })
            .collect();
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        for_each_mapped(shape, &map, |of, inf| data[of] = x.data()[inf]);
        let out = Tensor::from_vec(shape, data)?;
        let in_shape = x.shape().to_vec();
        let out_shape = shape.to_vec();
        Ok(self.record(&[x], out, move |g| {
            let in_numel: usize = in_shape.iter().product();
            let mut dx = vec![0.0; in_numel];
            for_each_mapped(&out_shape, &map, |of, inf| dx[inf] += g.data()[of]);
            vec![Tensor::from_vec(&in_shape, dx).unwrap()]
        }))
    }

    /// Slice `len` steps starting at `start` along `axis`.
    pub fn narrow(&self, x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= x.rank() || start + len > x.shape()[axis] || len == 0 {
            return Err(Error::Argument(format!(
                "narrow(axis {axis}, start {start}, len {len}) out of shape {:?}",
                x.shape()
            )));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let ext = x.shape()[axis];
        let mut out_shape = x.shape().to_vec();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let out = Tensor::from_vec(&out_shape, data)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(&[x], out, move |g| {
            let mut dx = vec![0.0; in_shape.iter().product()];
            for o in 0..outer {
                let dst = (o * ext + start) * inner;
                let src = o * len * inner;
                dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![Tensor::from_vec(&in_shape, dx).unwrap()]
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Argument("concat of zero tensors".into()));
        }
        let rank = parts[0].rank();
        if axis >= rank {
            return Err(Error::Argument(format!("concat axis {axis} out of rank {rank}")));
        }
        for p in parts {
            if p.rank() != rank
                || p.shape().iter().enumerate().any(|(d, &e)| d != axis && e != parts[0].shape()[d])
            {
                return Err(Error::Argument(format!(
                    "concat shape mismatch: {:?} vs {:?}",
                    parts[0].shape(),
                    p.shape()
                )));
            }
        }
        let outer: usize = parts[0].shape()[..axis].iter().product();
        let inner: usize = parts[0].shape()[axis + 1..].iter().product();
        let exts: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = exts.iter().sum();
        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = total;
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0usize;
        for (p, &ext) in parts.iter().zip(&exts) {
            for o in 0..outer {
                let src = o * ext * inner;
                let dst = (o * total + offset) * inner;
                data[dst..dst + ext * inner].copy_from_slice(&p.data()[src..src + ext * inner]);
            }
            offset += ext;
        }
        let out = Tensor::from_vec(&out_shape, data)?;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        let inputs: Vec<&Tensor> = parts.to_vec();
        Ok(self.record(&inputs, out, move |g| {
            let mut grads = Vec::with_capacity(shapes.len());
            let mut offset = 0usize;
            for (shape, &ext) in shapes.iter().zip(&exts) {
                let mut dp = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    let src = (o * total + offset) * inner;
                    let dst = o * ext * inner;
                    dp[dst..dst + ext * inner]
                        .copy_from_slice(&g.data()[src..src + ext * inner]);
                }
                grads.push(Tensor::from_vec(shape, dp).unwrap());
                offset += ext;
            }
            grads
        }))
    }

    /// Flat-index gather: out[i] = x[indices[i]], reshaped to `out_shape`.
    /// Backward scatter-adds into the input.
    pub fn gather(
        &self,
        x: &Tensor,
        indices: &Arc<Vec<usize>>,
        out_shape: &[usize],
    ) -> Result<Tensor> {
        let numel: usize = out_shape.iter().product();
        if numel != indices.len() {
            return Err(Error::Argument(format!(
                "gather: {} indices for shape {out_shape:?}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
            return Err(Error::Argument(format!(
                "gather index {bad} out of {} elements",
                x.numel()
            )));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let out = Tensor::from_vec(out_shape, data)?;
        let idx = Arc::clone(indices);
        let in_shape = x.shape().to_vec();
        Ok(self.record(&[x], out, move |g| {
            let mut dx = vec![0.0; in_shape.iter().product()];
            for (i, &src) in idx.iter().enumerate() {
                dx[src] += g.data()[i];
            }
            vec![Tensor::from_vec(&in_shape, dx).unwrap()]
        }))
    }

    // ---- composites --------------------------------------------------------

    /// L1-normalize each vector along the last axis: x / (sum |x| + eps).
    /// Fused (the composite abs → sum → expand → div materializes four
    /// score-sized temporaries on the hot path); gradient is the exact
    /// quotient rule, dx_j = (g_j − sign(y_j)·Σ g·y) / D per row.
    pub fn l1_normalize_rows(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        let n = *x
            .shape()
            .last()
            .ok_or_else(|| Error::Argument("l1_normalize_rows on 0-rank tensor".into()))?;
        let rows = x.numel() / n;
        let mut y = vec![0.0; x.numel()];
        let mut denom = vec![0.0; rows];
        for r in 0..rows {
            let xin = &x.data()[r * n..][..n];
            let d = xin.iter().map(|v| v.abs()).sum::<f64>() + eps;
            denom[r] = d;
            for (o, &v) in y[r * n..][..n].iter_mut().zip(xin) {
                *o = v / d;
            }
        }
        let out = Tensor::from_vec(x.shape(), y)?;
        let saved = out.clone();
        let denom = Arc::new(denom);
        Ok(self.record(&[x], out, move |g| {
            let mut dx = vec![0.0; saved.numel()];
            for r in 0..rows {
                let yv = &saved.data()[r * n..][..n];
                let gv = &g.data()[r * n..][..n];
                let dot: f64 = gv.iter().zip(yv).map(|(&a, &b)| a * b).sum();
                let d = denom[r];
                for ((o, &gi), &yi) in dx[r * n..][..n].iter_mut().zip(gv).zip(yv) {
                    *o = (gi - sign_of(yi) * dot) / d;
                }
            }
            vec![Tensor::from_vec(saved.shape(), dx).unwrap()]
        }))
    }
}

fn gd_shape(g: &Tensor) -> &[usize] {
    g.shape()
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus_fwd(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_der(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn ew1(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

fn ew2(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn map_values(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.shape(), ew1(t.data(), f)).unwrap()
}

fn mul_values(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(a.shape(), ew2(a.data(), b.data(), |x, y| x * y)).unwrap()
}

fn add_values(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(a.shape(), ew2(a.data(), b.data(), |x, y| x + y)).unwrap()
}

/// c[i,j] += a[i,l] · b[l,j], batched.
fn matmul_nn(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..][..m * k];
        let bb = &b[bi * k * n..][..k * n];
        let cb = &mut c[bi * m * n..][..m * n];
        for i in 0..m {
            let arow = &ab[i * k..][..k];
            let crow = &mut cb[i * n..][..n];
            for (l, &ail) in arow.iter().enumerate() {
                let brow = &bb[l * n..][..n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += ail * bv;
                }
            }
        }
    }
    c
}

/// c[i,j] = Σ_l a[i,l] · b[j,l] (b used transposed), batched.
fn matmul_nt(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..][..m * k];
        let bb = &b[bi * n * k..][..n * k];
        let cb = &mut c[bi * m * n..][..m * n];
        for i in 0..m {
            let arow = &ab[i * k..][..k];
            let crow = &mut cb[i * n..][..n];
            for (j, cv) in crow.iter_mut().enumerate() {
                let brow = &bb[j * k..][..k];
                *cv = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            }
        }
    }
    c
}

/// c[i,j] += a[l,i] · b[l,j] (a used transposed), batched.
fn matmul_tn(a: &[f64], b: &[f64], batch: usize, k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * k * m..][..k * m];
        let bb = &b[bi * k * n..][..k * n];
        let cb = &mut c[bi * m * n..][..m * n];
        for l in 0..k {
            let arow = &ab[l * m..][..m];
            let brow = &bb[l * n..][..n];
            for (i, &av) in arow.iter().enumerate() {
                let crow = &mut cb[i * n..][..n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

fn linear_fwd(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    for r in 0..rows {
        let xrow = &x[r * d_in..][..d_in];
        let yrow = &mut y[r * d_out..][..d_out];
        for (l, &xv) in xrow.iter().enumerate() {
            let wrow = &w[l * d_out..][..d_out];
            for (yv, &wv) in yrow.iter_mut().zip(wrow) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Keepdim output shape + per-input-dim output stride (0 on reduced dims).
fn reduce_prep(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if axes.is_empty() {
        return Err(Error::Argument("reduction over zero axes".into()));
    }
    let mut reduced = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::Argument(format!("axis {a} out of rank {}", shape.len())));
        }
        if std::mem::replace(&mut reduced[a], true) {
            return Err(Error::Argument(format!("duplicate axis {a}")));
        }
    }
    let kd_shape: Vec<usize> =
        shape.iter().zip(&reduced).map(|(&e, &r)| if r { 1 } else { e }).collect();
    let kd_strides = strides(&kd_shape);
    let out_stride: Vec<usize> = kd_strides
        .iter()
        .zip(&reduced)
        .map(|(&s, &r)| if r { 0 } else { s })
        .collect();
    Ok((kd_shape, out_stride))
}

fn axes_count(shape: &[usize], axes: &[usize]) -> Result<usize> {
    let (_, _) = reduce_prep(shape, axes)?;
    Ok(axes.iter().map(|&a| shape[a]).product())
}

fn finalize_shape(kd_shape: &[usize], in_shape: &[usize], axes: &[usize], keepdim: bool) -> Vec<usize> {
    if keepdim {
        return kd_shape.to_vec();
    }
    let squeezed: Vec<usize> = in_shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &e)| e)
        .collect();
    if squeezed.is_empty() {
        vec![1]
    } else {
        squeezed
    }
}

/// Odometer walk over `shape` in row-major order, calling f(flat, mapped)
/// where mapped advances by `mapped_stride[d]` per step of dim d.
fn for_each_mapped(shape: &[usize], mapped_stride: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut mapped = 0usize;
    for flat in 0..numel {
        f(flat, mapped);
        for d in (0..rank).rev() {
            idx[d] += 1;
            mapped += mapped_stride[d];
            if idx[d] < shape[d] {
                break;
            }
            mapped -= mapped_stride[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn permute_data(x: &[f64], in_shape: &[usize], axes: &[usize], out_shape: &[usize]) -> Vec<f64> {
    // iterate output in order; map to input flat index
    let in_strides = strides(in_shape);
    let mapped: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![0.0; x.len()];
    for_each_mapped(out_shape, &mapped, |of, inf| out[of] = x[inf]);
    out
}

impl Tensor {
    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }
}
