//! Forward recording and reverse replay of the network operator set.
//!
//! Ops append nodes to a flat tape; [`Tape::backward`] walks it once in
//! reverse. Node gradients stay queryable after backward (useful for
//! input-gradient checks); parameter gradients accumulate into [`Grads`].
//! Summation order inside every op is fixed, so single-threaded runs are
//! bit-reproducible.

use crate::nn::layers::{BatchNorm1D, Conv1D, Grads, ParamId, Params};
use crate::nn::tensor::Tensor;
use crate::nn::NnError;

/// Handle to a recorded tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Output of a training-mode batch norm: the normalized variable plus the
/// batch statistics the caller folds into the layer's running estimates.
pub struct BatchNormBatch {
    pub out: VarId,
    /// Per-channel batch mean.
    pub mean: Vec<f64>,
    /// Per-channel unbiased (n-1 denominator) batch variance, the form
    /// running statistics track; normalization itself uses the biased form.
    pub var: Vec<f64>,
}

enum Op {
    Input,
    Conv1d {
        x: VarId,
        layer: Conv1D,
    },
    BatchNormTrain {
        x: VarId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Running statistics are constants here, so backward only scales.
    BatchNormEval {
        x: VarId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Relu {
        x: VarId,
    },
    Add {
        a: VarId,
        b: VarId,
    },
    Scale {
        x: VarId,
        factor: f64,
    },
    SoftmaxLen {
        x: VarId,
    },
    SoftArgmaxWindow {
        x: VarId,
        depths: Vec<f64>,
        window: usize,
        starts: Vec<usize>,
        masses: Vec<f64>,
    },
    L1Sum {
        x: VarId,
        target: Tensor,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
}

/// Records a forward pass over `params` and replays it in reverse.
pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape { params, nodes: Vec::new(), consumed: false }
    }

    pub fn params(&self) -> &Params {
        self.params
    }

    /// Forward value of a recorded node.
    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss with respect to node `v`, populated by the
    /// last [`Tape::backward`]. `None` if the node did not influence the
    /// loss or backward has not run.
    pub fn grad(&self, v: VarId) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Drops the recorded graph so the tape can record a fresh pass.
    /// Previously issued [`VarId`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value, grad: None });
        VarId(self.nodes.len() - 1)
    }

    fn finite(value: Tensor, op: &'static str) -> Result<Tensor, NnError> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(NnError::NonFinite { op })
        }
    }

    /// Registers an externally produced tensor as a leaf.
    pub fn input(&mut self, t: Tensor) -> Result<VarId, NnError> {
        let t = Self::finite(t, "input")?;
        Ok(self.push(Op::Input, t))
    }

    /// Length-preserving dilated cross-correlation plus bias.
    pub fn conv1d(&mut self, x: VarId, layer: &Conv1D) -> Result<VarId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if c != layer.in_channels() {
            return Err(NnError::Shape {
                op: "conv1d",
                detail: format!("input has {c} channels, layer expects {}", layer.in_channels()),
            });
        }
        let mut y = Tensor::zeros(b, layer.out_channels(), l);
        conv1d_kernel(
            xv.data(),
            b,
            c,
            l,
            self.params.data(layer.weight_id()),
            layer.out_channels(),
            layer.kernel(),
            layer.dilation(),
            Some(self.params.data(layer.bias_id())),
            y.data_mut(),
        );
        let y = Self::finite(y, "conv1d")?;
        Ok(self.push(Op::Conv1d { x, layer: *layer }, y))
    }

    /// Batch norm with batch statistics; returns the per-channel batch
    /// mean and unbiased variance so the caller can update running stats.
    pub fn batch_norm_train(
        &mut self,
        x: VarId,
        layer: &BatchNorm1D,
    ) -> Result<BatchNormBatch, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if c != layer.channels() {
            return Err(NnError::Shape {
                op: "batch_norm",
                detail: format!("input has {c} channels, layer expects {}", layer.channels()),
            });
        }
        let n = (b * l) as f64;
        let mut mean = vec![0.0; c];
        let mut var_biased = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bb in 0..b {
                for &v in xv.row(bb, ch) {
                    s += v;
                }
            }
            mean[ch] = s / n;
            let mut sq = 0.0;
            for bb in 0..b {
                for &v in xv.row(bb, ch) {
                    let d = v - mean[ch];
                    sq += d * d;
                }
            }
            var_biased[ch] = sq / n;
        }
        let inv_std: Vec<f64> =
            var_biased.iter().map(|v| 1.0 / (v + BatchNorm1D::EPS).sqrt()).collect();
        let gamma = self.params.data(layer.gamma_id());
        let beta = self.params.data(layer.beta_id());
        let mut xhat = Tensor::zeros(b, c, l);
        let mut y = Tensor::zeros(b, c, l);
        for bb in 0..b {
            for ch in 0..c {
                let xr = xv.row(bb, ch);
                for (i, &v) in xr.iter().enumerate() {
                    let h = (v - mean[ch]) * inv_std[ch];
                    xhat.set(bb, ch, i, h);
                    y.set(bb, ch, i, gamma[ch] * h + beta[ch]);
                }
            }
        }
        let var_unbiased: Vec<f64> = if b * l > 1 {
            var_biased.iter().map(|v| v * n / (n - 1.0)).collect()
        } else {
            var_biased.clone()
        };
        let y = Self::finite(y, "batch_norm")?;
        let out = self.push(
            Op::BatchNormTrain {
                x,
                gamma: layer.gamma_id(),
                beta: layer.beta_id(),
                xhat,
                inv_std,
            },
            y,
        );
        Ok(BatchNormBatch { out, mean, var: var_unbiased })
    }

    /// Batch norm with the layer's running statistics (inference mode).
    pub fn batch_norm_eval(&mut self, x: VarId, layer: &BatchNorm1D) -> Result<VarId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if c != layer.channels() {
            return Err(NnError::Shape {
                op: "batch_norm",
                detail: format!("input has {c} channels, layer expects {}", layer.channels()),
            });
        }
        let inv_std: Vec<f64> =
            layer.running_var().iter().map(|v| 1.0 / (v + BatchNorm1D::EPS).sqrt()).collect();
        let mean = layer.running_mean();
        let gamma = self.params.data(layer.gamma_id());
        let beta = self.params.data(layer.beta_id());
        let mut xhat = Tensor::zeros(b, c, l);
        let mut y = Tensor::zeros(b, c, l);
        for bb in 0..b {
            for ch in 0..c {
                let xr = xv.row(bb, ch);
                for (i, &v) in xr.iter().enumerate() {
                    let h = (v - mean[ch]) * inv_std[ch];
                    xhat.set(bb, ch, i, h);
                    y.set(bb, ch, i, gamma[ch] * h + beta[ch]);
                }
            }
        }
        let y = Self::finite(y, "batch_norm")?;
        Ok(self.push(
            Op::BatchNormEval {
                x,
                gamma: layer.gamma_id(),
                beta: layer.beta_id(),
                xhat,
                inv_std,
            },
            y,
        ))
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId, NnError> {
        let xv = self.value(x);
        let mut y = xv.clone();
        for v in y.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let y = Self::finite(y, "relu")?;
        Ok(self.push(Op::Relu { x }, y))
    }

    /// Elementwise sum of two same-shape variables (residual addition).
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let mut y = av.clone();
        for (yi, bi) in y.data_mut().iter_mut().zip(bv.data()) {
            *yi += bi;
        }
        let y = Self::finite(y, "add")?;
        Ok(self.push(Op::Add { a, b }, y))
    }

    pub fn scale(&mut self, x: VarId, factor: f64) -> Result<VarId, NnError> {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v *= factor;
        }
        let y = Self::finite(y, "scale")?;
        Ok(self.push(Op::Scale { x, factor }, y))
    }

    /// Softmax along the length axis, independently per (batch, channel),
    /// computed with max subtraction for stability.
    pub fn softmax_len(&mut self, x: VarId) -> Result<VarId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        let mut y = Tensor::zeros(b, c, l);
        for bb in 0..b {
            for ch in 0..c {
                let row = xv.row(bb, ch);
                let out = y.row_mut(bb, ch);
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let mut z = 0.0;
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = (v - m).exp();
                    z += *o;
                }
                for o in out.iter_mut() {
                    *o /= z;
                }
            }
        }
        let y = Self::finite(y, "softmax")?;
        Ok(self.push(Op::SoftmaxLen { x }, y))
    }

    /// Windowed soft-argmax per (batch, channel): finds the `window`-wide
    /// span with maximal mass (ties pick the lowest start), then returns
    /// the mass-weighted mean of `depths` inside it. `window == length`
    /// degenerates to the standard soft-argmax. The ratio form makes the
    /// output invariant to positive rescaling of the distribution; the
    /// backward pass holds the selected window fixed.
    pub fn soft_argmax_window(
        &mut self,
        x: VarId,
        depths: &[f64],
        window: usize,
    ) -> Result<VarId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if depths.len() != l {
            return Err(NnError::Shape {
                op: "soft_argmax",
                detail: format!("{} depths for length {l}", depths.len()),
            });
        }
        if window == 0 || window > l {
            return Err(NnError::Shape {
                op: "soft_argmax",
                detail: format!("window {window} outside [1, {l}]"),
            });
        }
        let mut y = Tensor::zeros(b, c, 1);
        let mut starts = Vec::with_capacity(b * c);
        let mut masses = Vec::with_capacity(b * c);
        for bb in 0..b {
            for ch in 0..c {
                let (start, mass, out) = window_soft_argmax_row(xv.row(bb, ch), depths, window);
                y.set(bb, ch, 0, out);
                starts.push(start);
                masses.push(mass);
            }
        }
        let y = Self::finite(y, "soft_argmax")?;
        Ok(self.push(
            Op::SoftArgmaxWindow { x, depths: depths.to_vec(), window, starts, masses },
            y,
        ))
    }

    /// Sum of absolute differences against a constant target.
    pub fn l1_sum(&mut self, x: VarId, target: &Tensor) -> Result<VarId, NnError> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(NnError::Shape {
                op: "l1_sum",
                detail: format!("{:?} vs target {:?}", xv.shape(), target.shape()),
            });
        }
        if !target.is_finite() {
            return Err(NnError::NonFinite { op: "l1_sum" });
        }
        let s: f64 = xv.data().iter().zip(target.data()).map(|(&a, &t)| (a - t).abs()).sum();
        let y = Self::finite(Tensor::from_scalar(s), "l1_sum")?;
        Ok(self.push(Op::L1Sum { x, target: target.clone() }, y))
    }

    /// Replays the tape in reverse from scalar node `loss`, accumulating
    /// parameter gradients into `grads` and node gradients in place.
    /// Consumes the recording: a second call without [`Tape::reset`] plus
    /// a fresh forward pass is an error.
    pub fn backward(&mut self, loss: VarId, grads: &mut Grads) -> Result<(), NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoGraph);
        }
        if self.consumed {
            return Err(NnError::GraphConsumed);
        }
        if self.nodes[loss.0].value.shape() != (1, 1, 1) {
            return Err(NnError::Shape {
                op: "backward",
                detail: format!("loss must be (1,1,1), got {:?}", self.nodes[loss.0].value.shape()),
            });
        }
        self.consumed = true;
        let params = self.params;
        self.nodes[loss.0].grad = Some(Tensor::from_scalar(1.0));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let g = node.grad.as_ref().expect("gradient checked above");
            match &node.op {
                Op::Input => {}
                Op::Conv1d { x, layer } => {
                    let xv = &head[x.0].value;
                    let (b, cin, l) = xv.shape();
                    let (cout, k, dil) = (layer.out_channels(), layer.kernel(), layer.dilation());
                    let mut dw = vec![0.0; cout * cin * k];
                    let mut db = vec![0.0; cout];
                    conv1d_backward_params(
                        xv.data(),
                        b,
                        cin,
                        l,
                        g.data(),
                        cout,
                        k,
                        dil,
                        &mut dw,
                        &mut db,
                    );
                    accumulate(grads.slot_mut(layer.weight_id()), &dw);
                    accumulate(grads.slot_mut(layer.bias_id()), &db);
                    // dx is the same padded kernel applied to dy with
                    // transposed, tap-flipped weights.
                    let w = params.data(layer.weight_id());
                    let mut wt = vec![0.0; cin * cout * k];
                    for oc in 0..cout {
                        for ic in 0..cin {
                            for t in 0..k {
                                wt[(ic * cout + oc) * k + t] =
                                    w[(oc * cin + ic) * k + (k - 1 - t)];
                            }
                        }
                    }
                    let mut dx = vec![0.0; b * cin * l];
                    conv1d_kernel(g.data(), b, cout, l, &wt, cin, k, dil, None, &mut dx);
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
                    let (b, c, l) = xhat.shape();
                    let n = (b * l) as f64;
                    let gm = params.data(*gamma);
                    let mut dx = vec![0.0; b * c * l];
                    for ch in 0..c {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for bb in 0..b {
                            let gr = g.row(bb, ch);
                            let hr = xhat.row(bb, ch);
                            for i in 0..l {
                                sum_dy += gr[i];
                                sum_dy_xhat += gr[i] * hr[i];
                            }
                        }
                        grads.slot_mut(*gamma)[ch] += sum_dy_xhat;
                        grads.slot_mut(*beta)[ch] += sum_dy;
                        // dx = inv_std / n * (n*gi - sum(gi) - xhat_i * sum(gi*xhat))
                        // with gi = dy_i * gamma_c; the sums pick up gamma_c.
                        let (sg, sgx) = (gm[ch] * sum_dy, gm[ch] * sum_dy_xhat);
                        let scale = inv_std[ch] / n;
                        for bb in 0..b {
                            let gr = g.row(bb, ch);
                            let hr = xhat.row(bb, ch);
                            let dst = &mut dx[(bb * c + ch) * l..][..l];
                            for i in 0..l {
                                dst[i] = scale * (n * gm[ch] * gr[i] - sg - hr[i] * sgx);
                            }
                        }
                    }
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::BatchNormEval { x, gamma, beta, xhat, inv_std } => {
                    let (b, c, l) = xhat.shape();
                    let gm = params.data(*gamma);
                    let mut dx = vec![0.0; b * c * l];
                    for ch in 0..c {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for bb in 0..b {
                            let gr = g.row(bb, ch);
                            let hr = xhat.row(bb, ch);
                            let dst = &mut dx[(bb * c + ch) * l..][..l];
                            for i in 0..l {
                                sum_dy += gr[i];
                                sum_dy_xhat += gr[i] * hr[i];
                                dst[i] = gr[i] * gm[ch] * inv_std[ch];
                            }
                        }
                        grads.slot_mut(*gamma)[ch] += sum_dy_xhat;
                        grads.slot_mut(*beta)[ch] += sum_dy;
                    }
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::Relu { x } => {
                    let xv = &head[x.0].value;
                    let dx: Vec<f64> = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let dg = g.data().to_vec();
                    accumulate_node(&mut head[a.0], &dg);
                    accumulate_node(&mut head[b.0], &dg);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = g.data().iter().map(|&gi| gi * factor).collect();
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::SoftmaxLen { x } => {
                    let y = &node.value;
                    let (b, c, l) = y.shape();
                    let mut dx = vec![0.0; b * c * l];
                    for bb in 0..b {
                        for ch in 0..c {
                            let yr = y.row(bb, ch);
                            let gr = g.row(bb, ch);
                            let s: f64 = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                            let dst = &mut dx[(bb * c + ch) * l..][..l];
                            for i in 0..l {
                                dst[i] = yr[i] * (gr[i] - s);
                            }
                        }
                    }
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::SoftArgmaxWindow { x, depths, window, starts, masses } => {
                    let y = &node.value;
                    let (b, c, _) = y.shape();
                    let l = head[x.0].value.length();
                    let mut dx = vec![0.0; b * c * l];
                    for bb in 0..b {
                        for ch in 0..c {
                            let idx = bb * c + ch;
                            let dy = g.get(bb, ch, 0);
                            let out = y.get(bb, ch, 0);
                            let z = masses[idx];
                            let start = starts[idx];
                            let dst = &mut dx[idx * l..][..l];
                            for k in 0..*window {
                                dst[start + k] += dy * (depths[start + k] - out) / z;
                            }
                        }
                    }
                    accumulate_node(&mut head[x.0], &dx);
                }
                Op::L1Sum { x, target } => {
                    let dy = g.scalar();
                    let xv = &head[x.0].value;
                    let dx: Vec<f64> = xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &t)| {
                            if a > t {
                                dy
                            } else if a < t {
                                -dy
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate_node(&mut head[x.0], &dx);
                }
            }
        }
        Ok(())
    }
}

/// Windowed soft-argmax core for one distribution row: slides a
/// `window`-wide span to find maximal mass (ties pick the lowest start),
/// then returns (start, window mass, mass-weighted mean depth). The
/// winning window's sums are recomputed directly because the sliding
/// update accumulates rounding that would leak into the ratio.
pub(crate) fn window_soft_argmax_row(
    row: &[f64],
    depths: &[f64],
    window: usize,
) -> (usize, f64, f64) {
    let l = row.len();
    let mut mass: f64 = row[..window].iter().sum();
    let (mut best_start, mut best_mass) = (0, mass);
    for s in 1..=(l - window) {
        mass += row[s + window - 1] - row[s - 1];
        if mass > best_mass {
            best_mass = mass;
            best_start = s;
        }
    }
    let win = &row[best_start..best_start + window];
    let z: f64 = win.iter().sum();
    let n: f64 = win
        .iter()
        .zip(&depths[best_start..best_start + window])
        .map(|(&p, &d)| p * d)
        .sum();
    (best_start, z, n / z)
}

fn accumulate(slot: &mut [f64], delta: &[f64]) {
    for (s, d) in slot.iter_mut().zip(delta) {
        *s += d;
    }
}

fn accumulate_node(node: &mut Node, delta: &[f64]) {
    if node.grad.is_none() {
        node.grad = Some(Tensor::zeros_like(&node.value));
    }
    accumulate(node.grad.as_mut().expect("just inserted").data_mut(), delta);
}

const TILE_OC: usize = 4;
const TILE_L: usize = 16;

/// Length-preserving dilated cross-correlation on row-major (B, C, L)
/// buffers; `w` is (cout, cin, k) row-major, `k` odd.
///
/// Each batch's rows are copied into a zero-padded scratch so the inner
/// loops carry no boundary branches and keep a 4 out-channel by 16 lane
/// register tile of `mul_add` accumulators hot (rustc does not contract
/// `a * b + c` on its own). The tiled and remainder paths accumulate taps
/// in the same (in-channel, tap) order, so results do not depend on how
/// the length splits into tiles.
#[allow(clippy::too_many_arguments)]
fn conv1d_kernel(
    x: &[f64],
    batch: usize,
    cin: usize,
    len: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    dilation: usize,
    bias: Option<&[f64]>,
    y: &mut [f64],
) {
    debug_assert_eq!(x.len(), batch * cin * len);
    debug_assert_eq!(w.len(), cout * cin * k);
    debug_assert_eq!(y.len(), batch * cout * len);
    let pad = dilation * (k - 1) / 2;
    let lp = len + 2 * pad;
    let mut xp = vec![0.0; cin * lp];
    for b in 0..batch {
        for ic in 0..cin {
            let src = &x[(b * cin + ic) * len..][..len];
            xp[ic * lp + pad..ic * lp + pad + len].copy_from_slice(src);
        }
        let mut oc0 = 0;
        while oc0 < cout {
            let ocs = (cout - oc0).min(TILE_OC);
            let mut i0 = 0;
            while i0 < len {
                let lanes = (len - i0).min(TILE_L);
                if ocs == TILE_OC && lanes == TILE_L {
                    let mut acc = [[0.0f64; TILE_L]; TILE_OC];
                    for ic in 0..cin {
                        let xrow = &xp[ic * lp + i0..];
                        for t in 0..k {
                            let xs = &xrow[t * dilation..t * dilation + TILE_L];
                            for (r, accr) in acc.iter_mut().enumerate() {
                                let wv = w[((oc0 + r) * cin + ic) * k + t];
                                for e in 0..TILE_L {
                                    accr[e] = xs[e].mul_add(wv, accr[e]);
                                }
                            }
                        }
                    }
                    for (r, accr) in acc.iter().enumerate() {
                        let base = bias.map_or(0.0, |bb| bb[oc0 + r]);
                        let dst = &mut y[(b * cout + oc0 + r) * len + i0..][..TILE_L];
                        for e in 0..TILE_L {
                            dst[e] = accr[e] + base;
                        }
                    }
                } else {
                    for r in 0..ocs {
                        let oc = oc0 + r;
                        let base = bias.map_or(0.0, |bb| bb[oc]);
                        for e in 0..lanes {
                            let i = i0 + e;
                            let mut s = 0.0;
                            for ic in 0..cin {
                                let xrow = &xp[ic * lp + i..];
                                for t in 0..k {
                                    s = xrow[t * dilation]
                                        .mul_add(w[(oc * cin + ic) * k + t], s);
                                }
                            }
                            y[(b * cout + oc) * len + i] = s + base;
                        }
                    }
                }
                i0 += lanes;
            }
            oc0 += ocs;
        }
    }
}

/// Weight and bias gradients: `dw[oc][ic][t] = sum_b sum_i dy * x_padded`,
/// `db[oc] = sum dy`, accumulated with 8-lane dot products.
#[allow(clippy::too_many_arguments)]
fn conv1d_backward_params(
    x: &[f64],
    batch: usize,
    cin: usize,
    len: usize,
    dy: &[f64],
    cout: usize,
    k: usize,
    dilation: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let pad = dilation * (k - 1) / 2;
    let lp = len + 2 * pad;
    let mut xp = vec![0.0; cin * lp];
    for b in 0..batch {
        for ic in 0..cin {
            let src = &x[(b * cin + ic) * len..][..len];
            let row = &mut xp[ic * lp..ic * lp + lp];
            row.fill(0.0);
            row[pad..pad + len].copy_from_slice(src);
        }
        for oc in 0..cout {
            let dyr = &dy[(b * cout + oc) * len..][..len];
            db[oc] += dyr.iter().sum::<f64>();
            for ic in 0..cin {
                for t in 0..k {
                    dw[(oc * cin + ic) * k + t] +=
                        dot(dyr, &xp[ic * lp + t * dilation..][..len]);
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators to break the FP add
/// dependency chain.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for e in 0..8 {
            acc[e] = ac[e].mul_add(bc[e], acc[e]);
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..a.len() {
        s = a[i].mul_add(b[i], s);
    }
    s
}
