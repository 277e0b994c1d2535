//! Tape-based reverse-mode differentiation over NHWC tensors.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! backward pass. Layer weights are read straight from a [`ParamStore`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::real::{gemm, Real};
use super::tensor::Tensor;
use super::NnError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and seeded dropout.
    Train { seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Running batch-norm statistics are stored but not optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Tensor<T> {
        &self.params[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.params[idx].value
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Writes running statistics gathered by a training-mode graph.
    pub fn apply_updates(&mut self, updates: Vec<(usize, Vec<T>)>) {
        for (idx, data) in updates {
            self.params[idx].value.data = data;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.data.iter().all(|x| x.is_finite()))
    }
}

/// Output size and leading pad of a same-padded window.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn rows_per_sample(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid kernel column range for output column `ox`.
    fn kx_range(&self, ox: usize) -> (usize, usize, usize) {
        let start = (ox * self.stride) as isize - self.pad_left as isize;
        let k0 = (-start).max(0) as usize;
        let k1 = ((self.w as isize - start).min(self.k as isize)).max(0) as usize;
        (k0, k1, (start + k0 as isize).max(0) as usize)
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let patch = self.patch();
        let per = self.rows_per_sample() * patch;
        let in_per = self.h * self.w * self.cin;
        let kc = self.k * self.cin;
        let mut cols = vec![T::zero(); self.n * per];
        cols.par_chunks_mut(per).enumerate().for_each(|(s, out)| {
            let xs = &x[s * in_per..(s + 1) * in_per];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = &mut out[(oy * self.ow + ox) * patch..][..patch];
                    let (k0, k1, ix0) = self.kx_range(ox);
                    if k1 <= k0 {
                        continue;
                    }
                    let len = (k1 - k0) * self.cin;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = (iy as usize * self.w + ix0) * self.cin;
                        let dst = ky * kc + k0 * self.cin;
                        row[dst..dst + len].copy_from_slice(&xs[src..src + len]);
                    }
                }
            }
        });
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let patch = self.patch();
        let per = self.rows_per_sample() * patch;
        let in_per = self.h * self.w * self.cin;
        let kc = self.k * self.cin;
        let mut dx = vec![T::zero(); self.n * in_per];
        dx.par_chunks_mut(in_per).enumerate().for_each(|(s, out)| {
            let cs = &cols[s * per..(s + 1) * per];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = &cs[(oy * self.ow + ox) * patch..][..patch];
                    let (k0, k1, ix0) = self.kx_range(ox);
                    if k1 <= k0 {
                        continue;
                    }
                    let len = (k1 - k0) * self.cin;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = (iy as usize * self.w + ix0) * self.cin;
                        let src = ky * kc + k0 * self.cin;
                        for (o, &v) in out[dst..dst + len].iter_mut().zip(&row[src..src + len]) {
                            *o += v;
                        }
                    }
                }
            }
        });
        dx
    }
}

enum Op<T> {
    Input,
    Conv {
        x: Var,
        w: usize,
        b: usize,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Dense {
        x: Var,
        w: usize,
        b: usize,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<bool>,
        keep: T,
    },
    Reshape {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    PolicyLoss {
        pred: Var,
        target: Vec<T>,
        bias: T,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Same order and shapes as the parameter store; zero for frozen entries.
    pub params: Vec<Tensor<T>>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    /// Gradient with respect to a node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    mode: Mode,
    rng: ChaCha8Rng,
    updates: Vec<(usize, Vec<T>)>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        let seed = match mode {
            Mode::Train { seed } => seed,
            Mode::Eval => 0,
        };
        Graph {
            params,
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self.mode, Mode::Train { .. })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Running-statistic updates recorded by training-mode batch-norm.
    pub fn take_updates(&mut self) -> Vec<(usize, Vec<T>)> {
        std::mem::take(&mut self.updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Input, requires_grad)
    }

    /// Same-padded convolution. `x` is `[n, h, w, cin]`, the weight is
    /// `[k, k, cin, cout]` and the bias `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: usize, b: usize, stride: usize) -> Result<Var, NnError> {
        let xs = &self.nodes[x.0].value;
        let ws = &self.params.value(w).shape;
        if xs.shape.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[2] != xs.shape[3] {
            return Err(NnError::Shape(format!("conv input {:?} with kernel {:?}", xs.shape, ws)));
        }
        if self.params.value(b).len() != ws[3] || stride == 0 {
            return Err(NnError::Shape(format!("conv bias {:?} for {} filters", self.params.value(b).shape, ws[3])));
        }
        let (n, h, wd, cin) = (xs.shape[0], xs.shape[1], xs.shape[2], xs.shape[3]);
        let k = ws[0];
        let (oh, pad_top) = same_padding(h, k, stride);
        let (ow, pad_left) = same_padding(wd, k, stride);
        let geom = ConvGeom {
            n,
            h,
            w: wd,
            cin,
            oh,
            ow,
            cout: ws[3],
            k,
            stride,
            pad_top,
            pad_left,
        };
        let cols = geom.im2col(&xs.data);
        let rows = n * oh * ow;
        let mut y = Tensor::zeros(&[n, oh, ow, geom.cout]);
        gemm(false, false, rows, geom.patch(), geom.cout, T::one(), &cols, &self.params.value(w).data, T::zero(), &mut y.data);
        add_bias(&mut y.data, &self.params.value(b).data);
        Ok(self.push(y, Op::Conv { x, w, b, geom, cols }, true))
    }

    /// `x` is `[n, in]`, the weight `[in, out]`.
    pub fn dense(&mut self, x: Var, w: usize, b: usize) -> Result<Var, NnError> {
        let xs = &self.nodes[x.0].value;
        let ws = &self.params.value(w).shape;
        if xs.shape.len() != 2 || ws.len() != 2 || ws[0] != xs.shape[1] || self.params.value(b).len() != ws[1] {
            return Err(NnError::Shape(format!("dense input {:?} with weight {:?}", xs.shape, ws)));
        }
        let (n, din, dout) = (xs.shape[0], ws[0], ws[1]);
        let mut y = Tensor::zeros(&[n, dout]);
        gemm(false, false, n, din, dout, T::one(), &xs.data, &self.params.value(w).data, T::zero(), &mut y.data);
        add_bias(&mut y.data, &self.params.value(b).data);
        Ok(self.push(y, Op::Dense { x, w, b }, true))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let y = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        };
        let ng = self.needs(x);
        self.push(y, Op::Relu { x }, ng)
    }

    /// Batch normalization over every axis but the last.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
        eps: f64,
        momentum: f64,
    ) -> Result<Var, NnError> {
        let src = &self.nodes[x.0].value;
        let c = *src.shape.last().ok_or_else(|| NnError::Shape("batch norm on a scalar".into()))?;
        for idx in [gamma, beta, running_mean, running_var] {
            if self.params.value(idx).len() != c {
                return Err(NnError::Shape(format!("batch norm parameter of length {} for {c} channels", self.params.value(idx).len())));
            }
        }
        let m = src.len() / c;
        let train = self.is_train();
        if train && m < 2 {
            return Err(NnError::Shape("batch norm needs at least two values per channel in training".into()));
        }
        let eps = T::c(eps);
        let (mean, inv_std) = if train {
            let (mean, var) = channel_moments(&src.data, c);
            let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mo = T::c(momentum);
            let rest = T::one() - mo;
            let unbias = T::c(m as f64 / (m as f64 - 1.0));
            let rm = &self.params.value(running_mean).data;
            let rv = &self.params.value(running_var).data;
            let new_mean = (0..c).map(|j| mo * rm[j] + rest * mean[j]).collect();
            let new_var = (0..c).map(|j| mo * rv[j] + rest * var[j] * unbias).collect();
            self.updates.push((running_mean, new_mean));
            self.updates.push((running_var, new_var));
            (mean, inv)
        } else {
            let mean = self.params.value(running_mean).data.clone();
            let inv = self.params.value(running_var).data.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        };
        let g = &self.params.value(gamma).data[..c];
        let bt = &self.params.value(beta).data[..c];
        let (mean, inv) = (&mean[..c], &inv_std[..c]);
        let mut xhat = vec![T::zero(); src.len()];
        let mut y = vec![T::zero(); src.len()];
        for ((row, xr), yr) in src.data.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
            for j in 0..c {
                let xh = (row[j] - mean[j]) * inv[j];
                xr[j] = xh;
                yr[j] = g[j] * xh + bt[j];
            }
        }
        let out = Tensor {
            shape: src.shape.clone(),
            data: y,
        };
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: train,
            },
            true,
        ))
    }

    /// Inverted dropout; the identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.is_train() || rate <= 0.0 {
            return x;
        }
        let keep = T::c(1.0 / (1.0 - rate));
        let n = self.nodes[x.0].value.len();
        let cut = (rate * 4_294_967_296.0).round().min(u32::MAX as f64) as u32;
        let mut mask = vec![false; n];
        let mut data = vec![T::zero(); n];
        let src = &self.nodes[x.0].value;
        for ((m, y), &v) in mask.iter_mut().zip(data.iter_mut()).zip(&src.data) {
            if self.rng.next_u32() >= cut {
                *m = true;
                *y = v * keep;
            }
        }
        let y = Tensor {
            shape: src.shape.clone(),
            data,
        };
        let ng = self.needs(x);
        self.push(y, Op::Dropout { x, mask, keep }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let src = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != src.len() {
            return Err(NnError::Shape(format!("cannot reshape {:?} to {shape:?}", src.shape)));
        }
        let y = Tensor {
            shape: shape.to_vec(),
            data: src.data.clone(),
        };
        let ng = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, ng))
    }

    /// `[n, h, w, c]` to `[n, h*w*c]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, NnError> {
        let src = &self.nodes[x.0].value;
        let shape = [src.batch(), src.row_len()];
        self.reshape(x, &shape)
    }

    /// Concatenates two `[n, d]` tensors along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[0] != tb.shape[0] {
            return Err(NnError::Shape(format!("concat {:?} with {:?}", ta.shape, tb.shape)));
        }
        let (n, da, db) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut data = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            data.extend_from_slice(&ta.data[i * da..(i + 1) * da]);
            data.extend_from_slice(&tb.data[i * db..(i + 1) * db]);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape: vec![n, da + db], data }, Op::Concat { a, b }, ng))
    }

    /// Batch mean of the steering-weighted action loss. `pred` is `[n, 2]`
    /// and `target` holds `n` stored-form pairs.
    pub fn policy_loss(&mut self, pred: Var, target: &[T], bias: T) -> Result<Var, NnError> {
        let p = &self.nodes[pred.0].value;
        if p.shape.len() != 2 || p.shape[1] != 2 || target.len() != p.len() || p.shape[0] == 0 {
            return Err(NnError::Shape(format!("loss prediction {:?} with {} targets", p.shape, target.len())));
        }
        let n = p.shape[0];
        let total: T = p
            .data
            .chunks_exact(2)
            .zip(target.chunks_exact(2))
            .map(|(p, t)| super::loss::sample_loss([t[0], t[1]], [p[0], p[1]], bias))
            .sum();
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(total / T::c(n as f64)),
            Op::PolicyLoss {
                pred,
                target: target.to_vec(),
                bias,
            },
            ng,
        ))
    }

    /// `sum_i weights_i * x_i`, a probe loss for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var, NnError> {
        let src = &self.nodes[x.0].value;
        if weights.len() != src.len() {
            return Err(NnError::Shape(format!("{} weights for {} values", weights.len(), src.len())));
        }
        let v: T = src.data.iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum { x, weights }, ng))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads = self.params.zeros_like();
        grads[loss.0] = Some(vec![T::one(); self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(mut dy) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {
                    grads[i] = Some(dy);
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let rows = geom.n * geom.oh * geom.ow;
                    let patch = geom.patch();
                    gemm(true, false, patch, rows, geom.cout, T::one(), cols, &dy, T::one(), &mut pgrads[*w].data);
                    bias_grad(&mut pgrads[*b].data, &dy);
                    if self.needs(*x) {
                        let mut dcols = vec![T::zero(); rows * patch];
                        gemm(false, true, rows, geom.cout, patch, T::one(), &dy, &self.params.value(*w).data, T::zero(), &mut dcols);
                        let dx = geom.col2im(&dcols);
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Dense { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let (n, din) = (xv.shape[0], xv.shape[1]);
                    let dout = self.params.value(*w).shape[1];
                    gemm(true, false, din, n, dout, T::one(), &xv.data, &dy, T::one(), &mut pgrads[*w].data);
                    bias_grad(&mut pgrads[*b].data, &dy);
                    if self.needs(*x) {
                        let mut dx = vec![T::zero(); n * din];
                        gemm(false, true, n, dout, din, T::one(), &dy, &self.params.value(*w).data, T::zero(), &mut dx);
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Relu { x } => {
                    for (d, &y) in dy.iter_mut().zip(&node.value.data) {
                        if y <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let c = inv_std.len();
                    let m = dy.len() / c;
                    let mut sum_dy = vec![T::zero(); c];
                    let mut sum_dy_xhat = vec![T::zero(); c];
                    {
                        let (sd, sx) = (&mut sum_dy[..c], &mut sum_dy_xhat[..c]);
                        for (drow, xrow) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for j in 0..c {
                                sd[j] += drow[j];
                                sx[j] += drow[j] * xrow[j];
                            }
                        }
                    }
                    for j in 0..c {
                        pgrads[*gamma].data[j] += sum_dy_xhat[j];
                        pgrads[*beta].data[j] += sum_dy[j];
                    }
                    if self.needs(*x) {
                        let g = &self.params.value(*gamma).data;
                        let inv_m = T::c(1.0 / m as f64);
                        let scale: Vec<T> = (0..c).map(|j| g[j] * inv_std[j]).collect();
                        let scale = &scale[..c];
                        if *batch_stats {
                            let mdy: Vec<T> = sum_dy.iter().map(|&v| v * inv_m).collect();
                            let mdx: Vec<T> = sum_dy_xhat.iter().map(|&v| v * inv_m).collect();
                            let (mdy, mdx) = (&mdy[..c], &mdx[..c]);
                            for (drow, xrow) in dy.chunks_exact_mut(c).zip(xhat.chunks_exact(c)) {
                                for j in 0..c {
                                    drow[j] = scale[j] * (drow[j] - mdy[j] - xrow[j] * mdx[j]);
                                }
                            }
                        } else {
                            for drow in dy.chunks_exact_mut(c) {
                                for j in 0..c {
                                    drow[j] *= scale[j];
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dy);
                    }
                }
                Op::Dropout { x, mask, keep } => {
                    for (d, &m) in dy.iter_mut().zip(mask) {
                        *d = if m { *d * *keep } else { T::zero() };
                    }
                    accumulate(&mut grads, *x, dy);
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, dy);
                }
                Op::Concat { a, b } => {
                    let da = self.nodes[a.0].value.shape[1];
                    let db = self.nodes[b.0].value.shape[1];
                    if self.needs(*a) {
                        let ga: Vec<T> = dy.chunks_exact(da + db).flat_map(|r| r[..da].iter().copied()).collect();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb: Vec<T> = dy.chunks_exact(da + db).flat_map(|r| r[da..].iter().copied()).collect();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::PolicyLoss { pred, target, bias } => {
                    let p = &self.nodes[pred.0].value;
                    let n = T::c(p.shape[0] as f64);
                    let mut dx = Vec::with_capacity(p.len());
                    for (pp, tt) in p.data.chunks_exact(2).zip(target.chunks_exact(2)) {
                        let g = super::loss::sample_loss_grad([tt[0], tt[1]], [pp[0], pp[1]], *bias);
                        dx.push(dy[0] * g[0] / n);
                        dx.push(dy[0] * g[1] / n);
                    }
                    accumulate(&mut grads, *pred, dx);
                }
                Op::WeightedSum { x, weights } => {
                    let dx: Vec<T> = weights.iter().map(|&w| w * dy[0]).collect();
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Gradients {
            params: pgrads,
            nodes: grads,
        }
    }
}

fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn bias_grad<T: Real>(g: &mut [T], dy: &[T]) {
    let c = g.len();
    for row in dy.chunks_exact(c) {
        for (gg, &d) in g.iter_mut().zip(row) {
            *gg += d;
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, &b) in g.iter_mut().zip(&d) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Per-channel mean and biased variance over every axis but the last.
pub fn channel_moments<T: Real>(data: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let m = T::c((data.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for row in data.chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for v in &mut mean {
        *v = *v / m;
    }
    let mut var = vec![T::zero(); c];
    for row in data.chunks_exact(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *a += d * d;
        }
    }
    for v in &mut var {
        *v = *v / m;
    }
    (mean, var)
}
