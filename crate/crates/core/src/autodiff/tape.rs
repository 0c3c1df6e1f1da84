//! Reverse-mode tape.
//!
//! Operations evaluate eagerly and record what backward needs. The op set is
//! exactly what the five network architectures require; there is no general
//! broadcasting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{matmul, matmul_a_bt, matmul_at_b};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

enum Op<T: Scalar> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    OneMinus {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Tensor<T>,
    },
    Reshape {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
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
    BiasAdd {
        x: Var,
        b: Var,
    },
    GeneratedLinear {
        x: Var,
        theta: Var,
        in_dim: usize,
        out_dim: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of one scalar loss with respect to tape nodes.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a tensor. `needs_grad` marks trainable leaves.
    pub fn leaf(&mut self, t: Tensor<T>, needs_grad: bool) -> Var {
        self.push(t, Op::Leaf, needs_grad)
    }

    /// `y = x W + b` with `x: [n,i]`, `w: [i,o]`, `b: [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::Shape(format!(
                "linear: x{:?} w{:?} b{:?}",
                xs, ws, bs
            )));
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let mut y = matmul(self.value(x).data(), n, i, self.value(w).data(), o);
        let bd = self.value(b).data().to_vec();
        for row in y.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(&bd) {
                *v += bv;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(&[n, o], y)?,
            Op::Linear { x, w, b },
            needs,
        ))
    }

    /// Zero-padded cross-correlation. `x: [n,c,h,w]`, `k: [oc,c,kh,kw]`, `b: [oc]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::Shape(format!("conv2d: x{:?} k{:?} b{:?}", xs, ks, bs)));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c || bs[0] != oc {
            return Err(Error::Shape(format!("conv2d: x{:?} k{:?} b{:?}", xs, ks, bs)));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d: stride must be >= 1".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Shape(format!(
                "conv2d: kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let plane = oh * ow;
        let ckk = c * kh * kw;
        let mut y = vec![T::ZERO; n * oc * plane];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let bd = self.value(b).data();
        for img in 0..n {
            let col = im2col(&xd[img * c * h * w..], c, h, w, kh, kw, stride, pad, oh, ow);
            let out = matmul(kd, oc, ckk, &col, plane);
            let dst = &mut y[img * oc * plane..(img + 1) * oc * plane];
            for (o, chunk) in dst.chunks_mut(plane).enumerate() {
                for (v, &acc) in chunk.iter_mut().zip(&out[o * plane..(o + 1) * plane]) {
                    *v = acc + bd[o];
                }
            }
        }
        let needs = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(
            Tensor::new(&[n, oc, oh, ow], y)?,
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Window max over `[n,c,h,w]`; ties go to the lowest linear index.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Shape(format!("maxpool2d: x{:?}", xs)));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if k > h || k > w {
            return Err(Error::Shape(format!(
                "maxpool2d: window {} exceeds input {}x{}",
                k, h, w
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("maxpool2d: stride must be >= 1".into()));
        }
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let xd = self.value(x).data();
        let mut y = vec![T::ZERO; n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        let mut out_idx = 0usize;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = base + oi * stride * w + oj * stride;
                    let mut best_v = xd[best];
                    for ki in 0..k {
                        for kj in 0..k {
                            let idx = base + (oi * stride + ki) * w + (oj * stride + kj);
                            if xd[idx] > best_v {
                                best_v = xd[idx];
                                best = idx;
                            }
                        }
                    }
                    y[out_idx] = best_v;
                    argmax[out_idx] = best as u32;
                    out_idx += 1;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(&[n, c, oh, ow], y)?,
            Op::MaxPool2d { x, argmax },
            needs,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.maximum(T::ZERO),
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => sigmoid(v),
            })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(&shape, y).expect("same shape"),
            Op::Activation { x, kind },
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// `y = 1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let y: Vec<T> = self.value(x).data().iter().map(|&v| T::ONE - v).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(&shape, y).expect("same shape"),
            Op::OneMinus { x },
            needs,
        )
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0,1)")));
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::ZERO
                }
            })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let mask = Tensor::new(&shape, mask)?;
        let y: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| v * m)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, y)?, Op::Dropout { x, mask }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, needs))
    }

    /// Concatenate `[n, d_i]` inputs along axis 1.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat: no inputs".into()));
        }
        let n = self.value(xs[0]).shape().first().copied().unwrap_or(0);
        let mut total = 0usize;
        for &v in xs {
            let s = self.value(v).shape();
            if s.len() != 2 || s[0] != n {
                return Err(Error::Shape(format!("concat: input {:?}, batch {}", s, n)));
            }
            total += s[1];
        }
        let mut y = vec![T::ZERO; n * total];
        let mut off = 0usize;
        for &v in xs {
            let d = self.value(v).shape()[1];
            let src = self.value(v).data();
            for r in 0..n {
                y[r * total + off..r * total + off + d]
                    .copy_from_slice(&src[r * d..(r + 1) * d]);
            }
            off += d;
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(&[n, total], y)?,
            Op::Concat { xs: xs.to_vec() },
            needs,
        ))
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &str) -> Result<(Vec<T>, Vec<usize>, bool)> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", sa, sb)));
        }
        Ok((
            Vec::with_capacity(self.value(a).len()),
            sa,
            self.needs(a) || self.needs(b),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (mut y, shape, needs) = self.elementwise(a, b, "add")?;
        y.extend(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &z)| x + z),
        );
        Ok(self.push(Tensor::new(&shape, y)?, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (mut y, shape, needs) = self.elementwise(a, b, "sub")?;
        y.extend(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &z)| x - z),
        );
        Ok(self.push(Tensor::new(&shape, y)?, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (mut y, shape, needs) = self.elementwise(a, b, "mul")?;
        y.extend(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &z)| x * z),
        );
        Ok(self.push(Tensor::new(&shape, y)?, Op::Mul { a, b }, needs))
    }

    /// `[n,d] + [d]` broadcast over rows.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::Shape(format!("bias_add: {:?} + {:?}", xs, bs)));
        }
        let bd = self.value(b).data().to_vec();
        let y: Vec<T> = self
            .value(x)
            .data()
            .chunks(xs[1])
            .flat_map(|row| row.iter().zip(&bd).map(|(&v, &bv)| v + bv).collect::<Vec<_>>())
            .collect();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::new(&xs, y)?, Op::BiasAdd { x, b }, needs))
    }

    /// Apply a generated parameter vector as a linear layer.
    ///
    /// `theta` is `[in*out + out]` (weights then biases) or `[in*out]`
    /// (weights only), laid out row-major as `[in, out]`. A 1-row theta is
    /// shared across the batch; a theta with one row per input row applies
    /// per-row parameters.
    pub fn generated_linear(
        &mut self,
        x: Var,
        theta: Var,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ts = self.value(theta).shape().to_vec();
        if xs.len() != 2 || xs[1] != in_dim {
            return Err(Error::Shape(format!("generated_linear: x{:?}", xs)));
        }
        let n = xs[0];
        let wlen = in_dim * out_dim;
        let (rows, tlen) = match ts.as_slice() {
            [l] => (1, *l),
            [r, l] => (*r, *l),
            _ => return Err(Error::Shape(format!("generated_linear: theta{:?}", ts))),
        };
        if tlen != wlen && tlen != wlen + out_dim {
            return Err(Error::Shape(format!(
                "generated_linear: theta length {} not {} or {}",
                tlen,
                wlen,
                wlen + out_dim
            )));
        }
        if rows != 1 && rows != n {
            return Err(Error::Shape(format!(
                "generated_linear: {} theta rows for batch {}",
                rows, n
            )));
        }
        let has_bias = tlen == wlen + out_dim;
        let xd = self.value(x).data();
        let td = self.value(theta).data();
        let mut y = vec![T::ZERO; n * out_dim];
        for r in 0..n {
            let th = if rows == 1 { td } else { &td[r * tlen..(r + 1) * tlen] };
            for j in 0..out_dim {
                let mut acc = if has_bias { th[wlen + j] } else { T::ZERO };
                for i in 0..in_dim {
                    acc += xd[r * in_dim + i] * th[i * out_dim + j];
                }
                y[r * out_dim + j] = acc;
            }
        }
        let needs = self.needs(x) || self.needs(theta);
        Ok(self.push(
            Tensor::new(&[n, out_dim], y)?,
            Op::GeneratedLinear {
                x,
                theta,
                in_dim,
                out_dim,
            },
            needs,
        ))
    }

    /// Mean of `-log softmax(logits)[label]` over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 {
            return Err(Error::Shape(format!("softmax_cross_entropy: logits{:?}", ls)));
        }
        let (n, k) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {} labels for batch {}",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label(format!("label {bad} out of range 0..{k}")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![T::ZERO; n * k];
        let mut loss = 0.0f64;
        for r in 0..n {
            let row = &ld[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(row[0], |a, b| a.maximum(b));
            let mut z = T::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * k + j] = e;
                z += e;
            }
            for j in 0..k {
                probs[r * k + j] = probs[r * k + j] / z;
            }
            let lab = labels[r];
            // -log p = log z - (l - m)
            loss += z.to_f64().ln() - (row[lab] - m).to_f64();
        }
        loss /= n as f64;
        let probs = Tensor::new(&[n, k], probs)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss has shape {:?}, want scalar",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape(),
            vec![T::ONE],
        )?);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].clone() else { continue };
            self.backprop_node(i, &gy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, &b) in g.make_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(
        &self,
        i: usize,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, in_dim) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let out = self.value(*w).shape()[1];
                if self.needs(*x) {
                    let dx = matmul_a_bt(gy.data(), n, out, self.value(*w).data(), in_dim);
                    self.accum(grads, *x, Tensor::new(&[n, in_dim], dx)?);
                }
                if self.needs(*w) {
                    let dw = matmul_at_b(self.value(*x).data(), n, in_dim, gy.data(), out);
                    self.accum(grads, *w, Tensor::new(&[in_dim, out], dw)?);
                }
                if self.needs(*b) {
                    self.accum(grads, *b, Tensor::new(&[out], colsum(gy.data(), n, out))?);
                }
            }
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                pad,
            } => {
                self.backprop_conv(*x, *k, *b, *stride, *pad, gy, grads)?;
            }
            Op::MaxPool2d { x, argmax } => {
                if self.needs(*x) {
                    let mut dx = vec![T::ZERO; self.value(*x).len()];
                    for (g, &src) in gy.data().iter().zip(argmax) {
                        dx[src as usize] += *g;
                    }
                    self.accum(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
            Op::Activation { x, kind } => {
                if self.needs(*x) {
                    let xd = self.value(*x).data();
                    let yd = self.value(Var(i)).data();
                    let dx: Vec<T> = gy
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(idx, &g)| match kind {
                            Activation::Relu => {
                                if xd[idx] > T::ZERO {
                                    g
                                } else {
                                    T::ZERO
                                }
                            }
                            Activation::Tanh => g * (T::ONE - yd[idx] * yd[idx]),
                            Activation::Sigmoid => g * yd[idx] * (T::ONE - yd[idx]),
                        })
                        .collect();
                    self.accum(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
            Op::OneMinus { x } => {
                if self.needs(*x) {
                    let dx: Vec<T> = gy.data().iter().map(|&g| -g).collect();
                    self.accum(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let dx: Vec<T> = gy
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(&g, &m)| g * m)
                        .collect();
                    self.accum(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    self.accum(grads, *x, gy.reshape(self.value(*x).shape())?);
                }
            }
            Op::Concat { xs } => {
                let n = self.value(Var(i)).shape()[0];
                let total = self.value(Var(i)).shape()[1];
                let mut off = 0usize;
                for &v in xs {
                    let d = self.value(v).shape()[1];
                    if self.needs(v) {
                        let mut dv = vec![T::ZERO; n * d];
                        for r in 0..n {
                            dv[r * d..(r + 1) * d]
                                .copy_from_slice(&gy.data()[r * total + off..r * total + off + d]);
                        }
                        self.accum(grads, v, Tensor::new(&[n, d], dv)?);
                    }
                    off += d;
                }
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.clone());
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, gy.clone());
                let neg: Vec<T> = gy.data().iter().map(|&g| -g).collect();
                self.accum(grads, *b, Tensor::new(gy.shape(), neg)?);
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<T> = gy
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &z)| g * z)
                        .collect();
                    self.accum(grads, *a, Tensor::new(gy.shape(), da)?);
                }
                if self.needs(*b) {
                    let db: Vec<T> = gy
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &z)| g * z)
                        .collect();
                    self.accum(grads, *b, Tensor::new(gy.shape(), db)?);
                }
            }
            Op::BiasAdd { x, b } => {
                let (n, d) = (gy.shape()[0], gy.shape()[1]);
                self.accum(grads, *x, gy.clone());
                if self.needs(*b) {
                    self.accum(grads, *b, Tensor::new(&[d], colsum(gy.data(), n, d))?);
                }
            }
            Op::GeneratedLinear {
                x,
                theta,
                in_dim,
                out_dim,
            } => {
                self.backprop_generated(*x, *theta, *in_dim, *out_dim, gy, grads)?;
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.needs(*logits) {
                    let (n, k) = (probs.shape()[0], probs.shape()[1]);
                    let g = gy.data()[0] * T::from_f64(1.0 / n as f64);
                    let mut dl = probs.data().to_vec();
                    for (r, &lab) in labels.iter().enumerate() {
                        dl[r * k + lab] -= T::ONE;
                    }
                    for v in dl.iter_mut() {
                        *v *= g;
                    }
                    self.accum(grads, *logits, Tensor::new(&[n, k], dl)?);
                }
            }
        }
        Ok(())
    }

    fn backprop_conv(
        &self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, _, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
        let plane = oh * ow;
        let ckk = c * kh * kw;
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let gyd = gy.data();

        let mut dk = if self.needs(k) {
            Some(vec![T::ZERO; oc * ckk])
        } else {
            None
        };
        let mut dx = if self.needs(x) {
            Some(vec![T::ZERO; n * c * h * w])
        } else {
            None
        };
        for img in 0..n {
            let gimg = &gyd[img * oc * plane..(img + 1) * oc * plane];
            if let Some(dk) = dk.as_mut() {
                let col =
                    im2col(&xd[img * c * h * w..], c, h, w, kh, kw, stride, pad, oh, ow);
                let part = matmul_a_bt(gimg, oc, plane, &col, ckk);
                for (a, &v) in dk.iter_mut().zip(&part) {
                    *a += v;
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dcol = matmul_at_b(kd, oc, ckk, gimg, plane);
                col2im(
                    &dcol,
                    &mut dx[img * c * h * w..(img + 1) * c * h * w],
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                );
            }
        }
        if let Some(dk) = dk {
            self.accum(grads, k, Tensor::new(&ks, dk)?);
        }
        if let Some(dx) = dx {
            self.accum(grads, x, Tensor::new(&xs, dx)?);
        }
        if self.needs(b) {
            let mut db = vec![T::ZERO; oc];
            for img in 0..n {
                for o in 0..oc {
                    let s = &gyd[(img * oc + o) * plane..(img * oc + o + 1) * plane];
                    let mut acc = T::ZERO;
                    for &v in s {
                        acc += v;
                    }
                    db[o] += acc;
                }
            }
            self.accum(grads, b, Tensor::new(&[oc], db)?);
        }
        Ok(())
    }

    fn backprop_generated(
        &self,
        x: Var,
        theta: Var,
        in_dim: usize,
        out_dim: usize,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let n = self.value(x).shape()[0];
        let ts = self.value(theta).shape().to_vec();
        let tlen = *ts.last().expect("theta shape");
        let rows = if ts.len() == 1 { 1 } else { ts[0] };
        let wlen = in_dim * out_dim;
        let has_bias = tlen == wlen + out_dim;
        let xd = self.value(x).data();
        let td = self.value(theta).data();
        let gyd = gy.data();

        if self.needs(theta) {
            let mut dt = vec![T::ZERO; rows * tlen];
            for r in 0..n {
                let dst = if rows == 1 {
                    &mut dt[..]
                } else {
                    &mut dt[r * tlen..(r + 1) * tlen]
                };
                for i in 0..in_dim {
                    let xv = xd[r * in_dim + i];
                    for j in 0..out_dim {
                        dst[i * out_dim + j] += xv * gyd[r * out_dim + j];
                    }
                }
                if has_bias {
                    for j in 0..out_dim {
                        dst[wlen + j] += gyd[r * out_dim + j];
                    }
                }
            }
            self.accum(grads, theta, Tensor::new(&ts, dt)?);
        }
        if self.needs(x) {
            let mut dx = vec![T::ZERO; n * in_dim];
            for r in 0..n {
                let th = if rows == 1 { td } else { &td[r * tlen..(r + 1) * tlen] };
                for i in 0..in_dim {
                    let mut acc = T::ZERO;
                    for j in 0..out_dim {
                        acc += th[i * out_dim + j] * gyd[r * out_dim + j];
                    }
                    dx[r * in_dim + i] = acc;
                }
            }
            self.accum(grads, x, Tensor::new(&[n, in_dim], dx)?);
        }
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

fn colsum<T: Scalar>(data: &[T], n: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; d];
    for r in 0..n {
        for (o, &v) in out.iter_mut().zip(&data[r * d..(r + 1) * d]) {
            *o += v;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let plane = oh * ow;
    let mut col = vec![T::ZERO; c * kh * kw * plane];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * plane;
                for oi in 0..oh {
                    let yi = (oi * stride + ki) as isize - pad as isize;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let src = (ci * h + yi as usize) * w;
                    for oj in 0..ow {
                        let xj = (oj * stride + kj) as isize - pad as isize;
                        if xj < 0 || xj >= w as isize {
                            continue;
                        }
                        col[row + oi * ow + oj] = x[src + xj as usize];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    x: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * plane;
                for oi in 0..oh {
                    let yi = (oi * stride + ki) as isize - pad as isize;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    let dst = (ci * h + yi as usize) * w;
                    for oj in 0..ow {
                        let xj = (oj * stride + kj) as isize - pad as isize;
                        if xj < 0 || xj >= w as isize {
                            continue;
                        }
                        x[dst + xj as usize] += col[row + oi * ow + oj];
                    }
                }
            }
        }
    }
}
