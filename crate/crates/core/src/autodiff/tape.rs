use alloc::vec;
use alloc::vec::Vec;

use super::conv::{col2im, conv_gemm, im2col, ConvGeometry};
use super::tensor::{Real, Tensor};
use crate::error::{domain, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        /// `None` for pointwise convolutions, whose column matrix is the input.
        cols: Option<Vec<T>>,
    },
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample(Var),
    L1Loss {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
        count: usize,
    },
    Bce {
        logits: Var,
        target: Vec<T>,
    },
    Add(Var, Var),
    Scale(Var, T),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by forward op");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, targets, guide maps).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(weight).shape(),
            bias.map(|b| self.value(b).shape()),
            stride,
            padding,
        )?;
        let b = bias.map(|b| self.value(b).data());
        let (data, cols) = if geom.is_pointwise() {
            (conv_gemm(&geom, self.value(weight).data(), self.value(input).data(), b), None)
        } else {
            let cols = im2col(self.value(input).data(), &geom);
            (conv_gemm(&geom, self.value(weight).data(), &cols, b), Some(cols))
        };
        let value = Tensor::from_vec(&[geom.c_out, geom.h_out, geom.w_out], data)?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Concatenation of `[C_i, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(domain!("concat of zero tensors"));
        }
        let [_, h, w] = self.value(parts[0]).chw()?;
        let mut channels = 0;
        for &p in parts {
            let [c, ph, pw] = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(domain!("concat spatial mismatch: {h}x{w} vs {ph}x{pw}"));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[channels, h, w], data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start + len` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [c, h, w] = self.value(x).chw()?;
        if start + len > c || len == 0 {
            return Err(domain!("channel slice {start}..{} out of {c}", start + len));
        }
        let data = self.value(x).data()[start * h * w..(start + len) * h * w].to_vec();
        let value = Tensor::from_vec(&[len, h, w], data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).chw()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(domain!("maxpool2x2 on {h}x{w} input"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i0 = base + 2 * oy * w + 2 * ox;
                    let mut best = i0;
                    for i in [i0 + 1, i0 + w, i0 + w + 1] {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    data.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::from_vec(&[c, ho, wo], data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).chw()?;
        let src = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut data = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                let s = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                let d = &mut data[(ch * ho + y) * wo..(ch * ho + y + 1) * wo];
                for (x2, v) in d.iter_mut().enumerate() {
                    *v = s[x2 / 2];
                }
            }
        }
        let value = Tensor::from_vec(&[c, ho, wo], data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Upsample(x), rg))
    }

    /// Mean over masked pixels of the per-pixel L1 norm across channels.
    /// `mask` is `H·W` long and shared by all channels.
    pub fn l1_loss(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        let [c, h, w] = self.value(pred).chw()?;
        if self.value(target).shape() != [c, h, w] {
            return Err(domain!(
                "l1_loss shapes differ: {:?} vs {:?}",
                self.value(pred).shape(),
                self.value(target).shape()
            ));
        }
        if mask.len() != h * w {
            return Err(domain!("l1_loss mask has {} entries, expected {}", mask.len(), h * w));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(domain!("l1_loss with an all-zero mask"));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mut total = T::zero();
        for ch in 0..c {
            let off = ch * h * w;
            for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                total += (p[off + i] - t[off + i]).abs();
            }
        }
        let value = Tensor::scalar(total / T::from_f64(count as f64));
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(
            value,
            Op::L1Loss {
                pred,
                target,
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of `logits` against `target` in `[0, 1]`.
    pub fn bce_loss(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != target.len() || z.is_empty() {
            return Err(domain!(
                "bce_loss sizes differ: {} logits, {} targets",
                z.len(),
                target.len()
            ));
        }
        let total: T = z
            .iter()
            .zip(target)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let value = Tensor::scalar(total / T::from_f64(z.len() as f64));
        let rg = self.needs(logits);
        Ok(self.push(
            value,
            Op::Bce {
                logits,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(domain!(
                "add shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * s).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar node. Every node is visited at most once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(domain!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                    cols,
                } => {
                    let p = geom.out_pixels();
                    let kk = geom.patch_len();
                    let go = g.data();
                    let cols: &[T] = match cols {
                        Some(c) => c,
                        None => self.value(*input).data(),
                    };
                    if self.needs(*weight) {
                        let mut gw = vec![T::zero(); geom.c_out * kk];
                        // gw = go · colsᵀ
                        T::gemm(
                            geom.c_out,
                            p,
                            kk,
                            T::one(),
                            go,
                            (p as isize, 1),
                            cols,
                            (1, p as isize),
                            T::zero(),
                            &mut gw,
                            (kk as isize, 1),
                        );
                        let shape = self.value(*weight).shape();
                        accumulate(&mut grads, *weight, Tensor::from_vec(shape, gw)?);
                    }
                    if let Some(b) = bias {
                        if self.needs(*b) {
                            let gb: Vec<T> =
                                go.chunks_exact(p).map(|row| row.iter().copied().sum()).collect();
                            accumulate(&mut grads, *b, Tensor::from_vec(&[geom.c_out], gb)?);
                        }
                    }
                    if self.needs(*input) {
                        let w = self.value(*weight).data();
                        let mut gcols = vec![T::zero(); kk * p];
                        // gcols = wᵀ · go
                        T::gemm(
                            kk,
                            geom.c_out,
                            p,
                            T::one(),
                            w,
                            (1, kk as isize),
                            go,
                            (p as isize, 1),
                            T::zero(),
                            &mut gcols,
                            (p as isize, 1),
                        );
                        let gi = if geom.is_pointwise() {
                            gcols
                        } else {
                            let mut gi = vec![T::zero(); geom.c_in * geom.h * geom.w];
                            col2im(&gcols, geom, &mut gi);
                            gi
                        };
                        let shape = self.value(*input).shape();
                        accumulate(&mut grads, *input, Tensor::from_vec(shape, gi)?);
                    }
                }
                Op::Relu(x) => {
                    let out = node.value.data();
                    let data = g
                        .data()
                        .iter()
                        .zip(out)
                        .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::Sigmoid(x) => {
                    let out = node.value.data();
                    let data = g
                        .data()
                        .iter()
                        .zip(out)
                        .map(|(&gv, &s)| gv * s * (T::one() - s))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.needs(p) {
                            let part = g.data()[off..off + len].to_vec();
                            accumulate(&mut grads, p, Tensor::from_vec(self.value(p).shape(), part)?);
                        }
                        off += len;
                    }
                }
                Op::Slice { x, start } => {
                    let src = self.value(*x);
                    let [_, h, w] = src.chw()?;
                    let mut data = vec![T::zero(); src.len()];
                    let off = start * h * w;
                    data[off..off + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, Tensor::from_vec(src.shape(), data)?);
                }
                Op::MaxPool { x, argmax } => {
                    let src = self.value(*x);
                    let mut data = vec![T::zero(); src.len()];
                    for (&gv, &idx) in g.data().iter().zip(argmax) {
                        data[idx as usize] += gv;
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(src.shape(), data)?);
                }
                Op::Upsample(x) => {
                    let src = self.value(*x);
                    let [c, h, w] = src.chw()?;
                    let wo = 2 * w;
                    let mut data = vec![T::zero(); src.len()];
                    let gd = g.data();
                    for ch in 0..c {
                        for y in 0..2 * h {
                            let row = &gd[(ch * 2 * h + y) * wo..(ch * 2 * h + y + 1) * wo];
                            let d = &mut data[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                            for (x2, &v) in row.iter().enumerate() {
                                d[x2 / 2] += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(src.shape(), data)?);
                }
                Op::L1Loss {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let scale = g.data()[0] / T::from_f64(*count as f64);
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let hw = mask.len();
                    let mut gp = vec![T::zero(); p.len()];
                    for (j, gv) in gp.iter_mut().enumerate() {
                        if mask[j % hw] {
                            *gv = scale * sign(p.data()[j] - t.data()[j]);
                        }
                    }
                    if self.needs(*target) {
                        let gt = gp.iter().map(|&v| -v).collect();
                        accumulate(&mut grads, *target, Tensor::from_vec(t.shape(), gt)?);
                    }
                    if self.needs(*pred) {
                        accumulate(&mut grads, *pred, Tensor::from_vec(p.shape(), gp)?);
                    }
                }
                Op::Bce { logits, target } => {
                    let z = self.value(*logits);
                    let scale = g.data()[0] / T::from_f64(z.len() as f64);
                    let data = z
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&zv, &tv)| scale * (sigmoid(zv) - tv))
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::from_vec(z.shape(), data)?);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Scale(x, s) => {
                    let data = g.data().iter().map(|&v| v * *s).collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
            }
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.op {
                Op::Leaf if n.requires_grad => {
                    Some(grads[i].take().unwrap_or_else(|| Tensor::zeros(n.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { leaves })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of every differentiable leaf; unreached leaves hold zeros.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::param`]. `None` for
    /// intermediate nodes and constants.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.leaves.get_mut(v.0).and_then(|g| g.take())
    }
}
