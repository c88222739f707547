//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly as it is applied, so node ids
//! are already in topological order. [`Graph::backward`] walks the tape once
//! in reverse.

use crate::conv::{self, ConvGeom};
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::{Real, Tensor};
use rand::Rng;
use std::hash::{Hash, Hasher};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a train-mode batchnorm, returned so the owner
/// of the running averages can fold them in.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Deconv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    LogSoftmax {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulConst {
        x: Var,
        c: Tensor<T>,
    },
    Scale {
        x: Var,
        c: T,
    },
    Abs {
        x: Var,
    },
    Square {
        x: Var,
    },
    Log {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SumRows {
        x: Var,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    frozen: bool,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input or constant.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.push(t, Op::Leaf)
    }

    /// Parameter node; a constant while params are frozen.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let op = if self.frozen { Op::Leaf } else { Op::Param(id) };
        self.push(store.value(id).clone(), op)
    }

    /// While frozen, [`Graph::param`] records constants, so a second network
    /// can run inside this graph without receiving gradients.
    pub fn set_params_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), geom)?;
        Ok(self.push(y, Op::Conv2d { x, w, geom }))
    }

    pub fn deconv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv::deconv2d(self.value(x), self.value(w), geom)?;
        Ok(self.push(y, Op::Deconv2d { x, w, geom }))
    }

    /// Adds a per-channel bias `[c]` to an `[n, c, ...]` tensor.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if xs.len() < 2 || bs != [xs[1]] {
            return shape_err("channel_bias", xs, bs);
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut y = self.value(x).clone();
        let bd = self.value(b).data().to_vec();
        for bi in 0..n {
            for ci in 0..c {
                let off = (bi * c + ci) * inner;
                for v in &mut y.data_mut()[off..off + inner] {
                    *v = *v + bd[ci];
                }
            }
        }
        Ok(self.push(y, Op::ChannelBias { x, b }))
    }

    /// Affine layer `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return shape_err("dense", xs, ws);
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut y = vec![T::zero(); n * dout];
        for row in y.chunks_mut(dout) {
            row.copy_from_slice(self.value(b).data());
        }
        conv::matmul_into(
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            n,
            din,
            dout,
            &mut y,
        );
        let y = Tensor::new(&[n, dout], y)?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    fn bn_layout(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return arg_err(op, format!("expected NCHW input, got {xs:?}"));
        }
        if xs[0] == 0 {
            return arg_err(op, "batch size 0");
        }
        let c = xs[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err(op, xs, self.shape(gamma));
        }
        Ok((xs[0], c, xs[2] * xs[3]))
    }

    fn bn_apply(&self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: &[T], n: usize, c: usize, p: usize) -> (Tensor<T>, Vec<T>) {
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for bi in 0..n {
            for ci in 0..c {
                let off = (bi * c + ci) * p;
                for i in off..off + p {
                    let h = (xd[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = h;
                    y[i] = h * g[ci] + bt[ci];
                }
            }
        }
        (Tensor::new(self.shape(x), y).expect("same shape"), xhat)
    }

    /// Batch normalization using the statistics of this batch.
    pub fn batchnorm2d_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, p) = self.bn_layout("batchnorm2d", x, gamma, beta)?;
        let m = T::from_f64((n * p) as f64);
        let xd = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..n {
            for ci in 0..c {
                let off = (bi * c + ci) * p;
                mean[ci] = mean[ci] + xd[off..off + p].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        for bi in 0..n {
            for ci in 0..c {
                let off = (bi * c + ci) * p;
                let mu = mean[ci];
                var[ci] = var[ci] + xd[off..off + p].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / m);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, &mean, &inv_std, n, c, p);
        let out = self.push(
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((out, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm2d_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (n, c, p) = self.bn_layout("batchnorm2d", x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return shape_err("batchnorm2d", self.shape(x), &[mean.len()]);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, mean, &inv_std, n, c, p);
        Ok(self.push(
            y,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let y = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        self.push(y, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        self.push(y, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid { x })
    }

    fn rows(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match self.shape(x) {
            [n, k] if *k > 0 => Ok((*n, *k)),
            s => arg_err(op, format!("expected [rows, cols], got {s:?}")),
        }
    }

    /// Row-wise softmax of a `[n, k]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.rows("softmax", x)?;
        let mut y = self.value(x).clone();
        for row in y.data_mut().chunks_mut(k) {
            softmax_in_place(row);
        }
        Ok(self.push(y, Op::Softmax { x }))
    }

    /// Row-wise log-softmax of a `[n, k]` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.rows("log_softmax", x)?;
        let mut y = self.value(x).clone();
        for row in y.data_mut().chunks_mut(k) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        Ok(self.push(y, Op::LogSoftmax { x }))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return arg_err("dropout", format!("rate must be in [0, 1), got {rate}"));
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rate == 0.0 || rng.gen::<f64>() >= rate {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let mut y = self.value(x).clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        Ok(self.push(y, Op::Dropout { x, mask }))
    }

    /// Concatenates two NCHW tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return shape_err("concat_channels", sa, sb);
        }
        let (n, ca, cb, p) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let shape = [n, ca + cb, sa[2], sa[3]];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * p);
        for bi in 0..n {
            out.extend_from_slice(&da[bi * ca * p..(bi + 1) * ca * p]);
            out.extend_from_slice(&db[bi * cb * p..(bi + 1) * cb * p]);
        }
        let y = Tensor::new(&shape, out)?;
        Ok(self.push(y, Op::ConcatChannels { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same_shape(op, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(y, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    /// Elementwise product with a constant tensor (no gradient to `c`).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        self.value(x).check_same_shape("mul_const", &c)?;
        let data = self.value(x).data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let y = Tensor::new(self.shape(x), data)?;
        Ok(self.push(y, Op::MulConst { x, c }))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::Scale { x, c })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.abs());
        self.push(y, Op::Abs { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.ln());
        self.push(y, Op::Log { x })
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let y = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(y, Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = Tensor::scalar(t.sum() / T::from_f64(t.numel().max(1) as f64));
        self.push(y, Op::Mean { x })
    }

    /// Sums each row of `[n, k]` into `[n]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (n, k) = self.rows("sum_rows", x)?;
        let data = self.value(x).data().chunks(k).map(|r| r.iter().copied().sum()).collect();
        let y = Tensor::new(&[n], data)?;
        Ok(self.push(y, Op::SumRows { x }))
    }

    /// Selects `x[i, idx[i]]` from `[n, k]` into `[n]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, k) = self.rows("pick", x)?;
        if idx.len() != n {
            return shape_err("pick", self.shape(x), &[idx.len()]);
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= k) {
            return arg_err("pick", format!("index {bad} out of range for width {k}"));
        }
        let d = self.value(x).data();
        let data = idx.iter().enumerate().map(|(r, &i)| d[r * k + i]).collect();
        let y = Tensor::new(&[n], data)?;
        Ok(self.push(
            y,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Hash of the active branch of every piecewise op on the tape. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } | Op::Abs { x } => {
                    for &v in self.value(*x).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for &v in self.value(*x).data() {
                        (v < *lo, v > *hi).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Backward pass from a scalar loss (seed gradient 1).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return arg_err(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            );
        }
        let seed = Tensor::full(self.shape(loss), T::one());
        self.backward_from(&[(loss, seed)])
    }

    /// Backward pass from arbitrary seed gradients.
    pub fn backward_from(&self, seeds: &[(Var, Tensor<T>)]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            self.value(*v).check_same_shape("backward seed", g)?;
            accumulate(&mut grads, *v, g.clone())?;
            last = last.max(v.0);
        }
        for id in (0..=last).rev() {
            let Some(gy) = grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &gy, &mut grads)?;
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let zip_map = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Result<Tensor<T>> {
            // f(input, output, upstream)
            let xv = self.value(x);
            let data = xv
                .data()
                .iter()
                .zip(node.value.data())
                .zip(gy.data())
                .map(|((&a, &y), &g)| f(a, y, g))
                .collect();
            Tensor::new(xv.shape(), data)
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = conv::conv2d_backward(self.value(*x), self.value(*w), gy, *geom)?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *w, dw)?;
            }
            Op::Deconv2d { x, w, geom } => {
                let (dx, dw) = conv::deconv2d_backward(self.value(*x), self.value(*w), gy, *geom)?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *w, dw)?;
            }
            Op::ChannelBias { x, b } => {
                let s = gy.shape();
                let (n, c) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let mut db = vec![T::zero(); c];
                for bi in 0..n {
                    for (ci, acc) in db.iter_mut().enumerate() {
                        let off = (bi * c + ci) * inner;
                        *acc = *acc + gy.data()[off..off + inner].iter().copied().sum::<T>();
                    }
                }
                accumulate(grads, *x, gy.clone())?;
                accumulate(grads, *b, Tensor::new(&[c], db)?)?;
            }
            Op::Dense { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                // dx = gy · w ; dw = gyᵀ · x ; db = Σ rows gy
                let dx = conv::matmul(gy.data(), false, self.value(*w).data(), false, n, dout, din);
                let dw = conv::matmul(gy.data(), true, self.value(*x).data(), false, dout, n, din);
                let mut db = vec![T::zero(); dout];
                for row in gy.data().chunks(dout) {
                    for (a, &g) in db.iter_mut().zip(row) {
                        *a = *a + g;
                    }
                }
                accumulate(grads, *x, Tensor::new(&[n, din], dx)?)?;
                accumulate(grads, *w, Tensor::new(&[dout, din], dw)?)?;
                accumulate(grads, *b, Tensor::new(&[dout], db)?)?;
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = gy.shape();
                let (n, c, p) = (s[0], s[1], s[2] * s[3]);
                let m = T::from_f64((n * p) as f64);
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..n {
                    for ci in 0..c {
                        let off = (bi * c + ci) * p;
                        for i in off..off + p {
                            dgamma[ci] = dgamma[ci] + gy.data()[i] * xhat[i];
                            dbeta[ci] = dbeta[ci] + gy.data()[i];
                        }
                    }
                }
                // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
                let mut dx = vec![T::zero(); gy.numel()];
                for bi in 0..n {
                    for ci in 0..c {
                        let off = (bi * c + ci) * p;
                        let k = g[ci] * inv_std[ci] / m;
                        for i in off..off + p {
                            dx[i] = k * (m * gy.data()[i] - dbeta[ci] - xhat[i] * dgamma[ci]);
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(s, dx)?)?;
                accumulate(grads, *gamma, Tensor::new(&[c], dgamma)?)?;
                accumulate(grads, *beta, Tensor::new(&[c], dbeta)?)?;
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = gy.shape();
                let (n, c, p) = (s[0], s[1], s[2] * s[3]);
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gy.numel()];
                for bi in 0..n {
                    for ci in 0..c {
                        let off = (bi * c + ci) * p;
                        for i in off..off + p {
                            dgamma[ci] = dgamma[ci] + gy.data()[i] * xhat[i];
                            dbeta[ci] = dbeta[ci] + gy.data()[i];
                            dx[i] = gy.data()[i] * g[ci] * inv_std[ci];
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(s, dx)?)?;
                accumulate(grads, *gamma, Tensor::new(&[c], dgamma)?)?;
                accumulate(grads, *beta, Tensor::new(&[c], dbeta)?)?;
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let dx = zip_map(*x, &|a, _, g| if a > T::zero() { g } else { g * slope })?;
                accumulate(grads, *x, dx)?;
            }
            Op::Tanh { x } => {
                let dx = zip_map(*x, &|_, y, g| g * (T::one() - y * y))?;
                accumulate(grads, *x, dx)?;
            }
            Op::Sigmoid { x } => {
                let dx = zip_map(*x, &|_, y, g| g * y * (T::one() - y))?;
                accumulate(grads, *x, dx)?;
            }
            Op::Softmax { x } => {
                let k = gy.shape()[1];
                let mut dx = gy.clone();
                for (row, (yr, gr)) in dx
                    .data_mut()
                    .chunks_mut(k)
                    .zip(node.value.data().chunks(k).zip(gy.data().chunks(k)))
                {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in row.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::LogSoftmax { x } => {
                let k = gy.shape()[1];
                let mut dx = gy.clone();
                for (row, (yr, gr)) in dx
                    .data_mut()
                    .chunks_mut(k)
                    .zip(node.value.data().chunks(k).zip(gy.data().chunks(k)))
                {
                    let total: T = gr.iter().copied().sum();
                    for ((d, &yv), &gv) in row.iter_mut().zip(yr).zip(gr) {
                        *d = gv - yv.exp() * total;
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::Dropout { x, mask } => {
                let data = gy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                accumulate(grads, *x, Tensor::new(gy.shape(), data)?)?;
            }
            Op::ConcatChannels { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, ca, cb, p) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let mut ga = Vec::with_capacity(n * ca * p);
                let mut gb = Vec::with_capacity(n * cb * p);
                for bi in 0..n {
                    let off = bi * (ca + cb) * p;
                    ga.extend_from_slice(&gy.data()[off..off + ca * p]);
                    gb.extend_from_slice(&gy.data()[off + ca * p..off + (ca + cb) * p]);
                }
                accumulate(grads, *a, Tensor::new(sa, ga)?)?;
                accumulate(grads, *b, Tensor::new(sb, gb)?)?;
            }
            Op::Reshape { x } => {
                let g = gy.clone().reshape(self.shape(*x))?;
                accumulate(grads, *x, g)?;
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, gy.clone())?;
                accumulate(grads, *b, gy.clone())?;
            }
            Op::Sub { a, b } => {
                accumulate(grads, *a, gy.clone())?;
                accumulate(grads, *b, gy.map(|g| -g))?;
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = gy.data().iter().zip(vb.data()).map(|(&g, &y)| g * y).collect();
                let db = gy.data().iter().zip(va.data()).map(|(&g, &x)| g * x).collect();
                accumulate(grads, *a, Tensor::new(va.shape(), da)?)?;
                accumulate(grads, *b, Tensor::new(vb.shape(), db)?)?;
            }
            Op::MulConst { x, c } => {
                let data = gy.data().iter().zip(c.data()).map(|(&g, &k)| g * k).collect();
                accumulate(grads, *x, Tensor::new(gy.shape(), data)?)?;
            }
            Op::Scale { x, c } => {
                let c = *c;
                accumulate(grads, *x, gy.map(|g| g * c))?;
            }
            Op::Abs { x } => {
                let dx = zip_map(*x, &|a, _, g| if a > T::zero() { g } else if a < T::zero() { -g } else { T::zero() })?;
                accumulate(grads, *x, dx)?;
            }
            Op::Square { x } => {
                let two = T::from_f64(2.0);
                let dx = zip_map(*x, &|a, _, g| two * a * g)?;
                accumulate(grads, *x, dx)?;
            }
            Op::Log { x } => {
                let dx = zip_map(*x, &|a, _, g| g / a)?;
                accumulate(grads, *x, dx)?;
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let dx = zip_map(*x, &|a, _, g| if a < lo || a > hi { T::zero() } else { g })?;
                accumulate(grads, *x, dx)?;
            }
            Op::Sum { x } => {
                let g = gy.data()[0];
                accumulate(grads, *x, Tensor::full(self.shape(*x), g))?;
            }
            Op::Mean { x } => {
                let n = T::from_f64(self.value(*x).numel().max(1) as f64);
                let g = gy.data()[0] / n;
                accumulate(grads, *x, Tensor::full(self.shape(*x), g))?;
            }
            Op::SumRows { x } => {
                let (n, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let data = (0..n * k).map(|i| gy.data()[i / k]).collect();
                accumulate(grads, *x, Tensor::new(&[n, k], data)?)?;
            }
            Op::Pick { x, idx } => {
                let k = self.shape(*x)[1];
                let mut dx = Tensor::zeros(self.shape(*x));
                for (r, &i) in idx.iter().enumerate() {
                    dx.data_mut()[r * k + i] = gy.data()[r];
                }
                accumulate(grads, *x, dx)?;
            }
        }
        Ok(())
    }

    /// Accumulates gradients of every parameter node into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.grad_mut(*id).axpy(T::one(), g)?;
            }
        }
        Ok(())
    }

    /// Verifies every node value is finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nodes.iter().position(|n| !n.value.is_finite()) {
            None => Ok(()),
            Some(i) => Err(TensorError::NonFinite(format!("graph node {i} ({:?})", op_name(&self.nodes[i].op)))),
        }
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::Conv2d { .. } => "conv2d",
        Op::Deconv2d { .. } => "deconv2d",
        Op::ChannelBias { .. } => "channel_bias",
        Op::Dense { .. } => "dense",
        Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => "batchnorm2d",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Tanh { .. } => "tanh",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Softmax { .. } => "softmax",
        Op::LogSoftmax { .. } => "log_softmax",
        Op::Dropout { .. } => "dropout",
        Op::ConcatChannels { .. } => "concat_channels",
        Op::Reshape { .. } => "reshape",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::MulConst { .. } => "mul_const",
        Op::Scale { .. } => "scale",
        Op::Abs { .. } => "abs",
        Op::Square { .. } => "square",
        Op::Log { .. } => "log",
        Op::Clamp { .. } => "clamp",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::SumRows { .. } => "sum_rows",
        Op::Pick { .. } => "pick",
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(T::one(), &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        total = total + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}
