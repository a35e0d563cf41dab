use rand::Rng;

use super::element::{gemm, Element, Trans};
use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::loss::{self, LossConfig, PairLabel};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geometry: ConvGeometry,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape {
        input: Var,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    /// Per-element multiplier: 0 or 1/keep_prob.
    Dropout {
        input: Var,
        scale: Vec<T>,
    },
    L2Normalize {
        input: Var,
        norms: Vec<T>,
        eps: T,
    },
    ContrastiveLoss {
        embeddings: Var,
        labels: Vec<PairLabel>,
        coeffs: Vec<T>,
    },
    Square {
        input: Var,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelBias { .. } => "channel_bias",
            Op::Relu { .. } => "relu",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Reshape { .. } => "reshape",
            Op::Dense { .. } => "dense",
            Op::Dropout { .. } => "dropout",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::ContrastiveLoss { .. } => "contrastive_loss",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    trainable: bool,
    requires_grad: bool,
}

/// Ordered record of executed ops, replayed in reverse by [`Tape::backward`].
///
/// Leaves added with [`Tape::variable`] are trainable: after `backward`
/// their tensors carry a populated gradient (zeros if the loss does not
/// depend on them). Intermediate gradients are not retained.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Recorded op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// `(op name, output shape)` for every recorded node, in order.
    pub fn trace(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.nodes
            .iter()
            .map(|n| (n.op.name(), n.value.shape().to_vec()))
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn variable(&mut self, mut value: Tensor<T>) -> Var {
        value.clear_grad();
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].trainable = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Remove a leaf's tensor (with its gradient) from the tape.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = self.nodes[v.0].value.shape().to_vec();
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(shape))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Same-padded k×k convolution. `input` is `[N,H,W,Cin]`, `kernel` is
    /// `[k,k,Cin,Cout]` with odd `k`.
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (xs, ks) = (self.shape(input), self.shape(kernel));
        if xs.len() != 4 || ks.len() != 4 {
            return Err(shape_err!(
                "conv2d expects rank-4 input and kernel, got {xs:?} and {ks:?}"
            ));
        }
        if ks[0] != ks[1] || ks[0] % 2 == 0 {
            return Err(shape_err!(
                "conv2d kernel must be square with odd size, got {ks:?}"
            ));
        }
        if ks[2] != xs[3] {
            return Err(shape_err!(
                "conv2d kernel expects {} input channels, input has {}",
                ks[2],
                xs[3]
            ));
        }
        let geometry = ConvGeometry {
            batch: xs[0],
            height: xs[1],
            width: xs[2],
            in_channels: xs[3],
            out_channels: ks[3],
            kernel: ks[0],
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            &geometry,
        );
        let value = Tensor::new(
            [
                geometry.batch,
                geometry.height,
                geometry.width,
                geometry.out_channels,
            ],
            out,
        )?;
        let rg = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geometry,
            },
            rg,
        ))
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input);
        let bs = self.shape(bias);
        let c = *xs.last().unwrap();
        if bs != [c] {
            return Err(shape_err!(
                "bias shape {bs:?} does not match channel count {c}"
            ));
        }
        let mut value = self.value(input).clone();
        let b = self.value(bias).data();
        for chunk in value.data_mut().chunks_mut(c) {
            for (v, &bi) in chunk.iter_mut().zip(b) {
                *v = *v + bi;
            }
        }
        let rg = self.needs(input) || self.needs(bias);
        Ok(self.push(value, Op::ChannelBias { input, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let mut value = self.value(input).clone();
        for v in value.data_mut() {
            *v = v.max(T::zero());
        }
        let rg = self.needs(input);
        self.push(value, Op::Relu { input }, rg)
    }

    /// 2×2 max pooling with stride 2 over `[N,H,W,C]`.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(shape_err!("maxpool2d expects rank-4 input, got {xs:?}"));
        }
        let (out, argmax) =
            kernels::maxpool2x2_forward(self.value(input).data(), xs[0], xs[1], xs[2], xs[3]);
        let value = Tensor::new([xs[0], xs[1].div_ceil(2), xs[2].div_ceil(2), xs[3]], out)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// Collapse everything after the leading (batch) axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input);
        let n = xs[0];
        let rest: usize = xs[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    /// `input · weight + bias` for `[N,Din] · [Din,Dout]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || ws[0] != xs[1] || bs != [ws[1]] {
            return Err(shape_err!(
                "dense shapes do not conform: input {xs:?}, weight {ws:?}, bias {bs:?}"
            ));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(
            n,
            din,
            dout,
            self.value(input).data(),
            Trans::No,
            self.value(weight).data(),
            Trans::No,
            T::one(),
            &mut out,
        );
        let value = Tensor::new([n, dout], out)?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Inverted dropout: in train mode each element survives with
    /// probability `keep_prob` and is scaled by `1/keep_prob`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        keep_prob: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep probability must be in (0, 1], got {keep_prob}"
            )));
        }
        let n = self.value(input).len();
        let scale = if mode == Mode::Infer || keep_prob == 1.0 {
            vec![T::one(); n]
        } else {
            let kept = T::of_f64(1.0 / keep_prob);
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < keep_prob {
                        kept
                    } else {
                        T::zero()
                    }
                })
                .collect()
        };
        let mut value = self.value(input).clone();
        for (v, &s) in value.data_mut().iter_mut().zip(&scale) {
            *v = *v * s;
        }
        let rg = self.needs(input);
        Ok(self.push(value, Op::Dropout { input, scale }, rg))
    }

    /// Normalize each row of a `[N,D]` tensor to unit L2 norm.
    pub fn l2_normalize(&mut self, input: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 {
            return Err(shape_err!("l2_normalize expects [N,D], got {xs:?}"));
        }
        let eps = T::of_f64(eps);
        let (out, norms) = kernels::l2_normalize_rows(self.value(input).data(), xs[0], eps);
        let rg = self.needs(input);
        Ok(self.push(
            Tensor::new(xs, out)?,
            Op::L2Normalize { input, norms, eps },
            rg,
        ))
    }

    /// Mean contrastive loss where row `i` is paired with row `i + P` of a
    /// `[2P, D]` embedding batch, `P = labels.len()`.
    pub fn contrastive_loss(
        &mut self,
        embeddings: Var,
        labels: &[PairLabel],
        cfg: &LossConfig,
    ) -> Result<Var> {
        let es = self.shape(embeddings).to_vec();
        let pairs = labels.len();
        if es.len() != 2 || es[0] != 2 * pairs || pairs == 0 {
            return Err(shape_err!(
                "contrastive loss needs a [2*{pairs}, D] batch, got {es:?}"
            ));
        }
        let value = self.value(embeddings);
        let mut total = 0.0f64;
        let mut coeffs = Vec::with_capacity(pairs);
        for (i, &y) in labels.iter().enumerate() {
            let (a, b) = (value.row(i), value.row(i + pairs));
            let d = loss::euclidean(a, b)?;
            total += loss::contrastive_loss(d.as_f64(), y, cfg)?;
            coeffs.push(loss::pair_grad_coeff(d, y, cfg));
        }
        let mean = T::of_f64(total / pairs as f64);
        let rg = self.needs(embeddings);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::ContrastiveLoss {
                embeddings,
                labels: labels.to_vec(),
                coeffs,
            },
            rg,
        ))
    }

    pub fn square(&mut self, input: Var) -> Var {
        let mut value = self.value(input).clone();
        for v in value.data_mut() {
            *v = *v * *v;
        }
        let rg = self.needs(input);
        self.push(value, Op::Square { input }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// `Σ weights ⊙ input` with constant weights of the input's shape.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        if weights.shape() != self.shape(input) {
            return Err(shape_err!(
                "weights {:?} do not match input {:?}",
                weights.shape(),
                self.shape(input)
            ));
        }
        let s: T = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&x, &w)| x * w)
            .sum();
        let rg = self.needs(input);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input,
                weights: weights.data().to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`; fills the gradient of every
    /// trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (target, contrib) in self.local_grads(idx, &g) {
                if !self.needs(target) {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a = *a + *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if node.trainable {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `idx` to its inputs, given its output gradient.
    fn local_grads(&self, idx: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                geometry,
            } => {
                let (dk, dx) = kernels::conv2d_backward(
                    g,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    geometry,
                    self.needs(*kernel),
                    self.needs(*input),
                );
                let mut out = Vec::new();
                out.extend(dk.map(|d| (*kernel, d)));
                out.extend(dx.map(|d| (*input, d)));
                out
            }
            Op::ChannelBias { input, bias } => {
                let c = self.value(*bias).len();
                let mut db = vec![T::zero(); c];
                for chunk in g.chunks(c) {
                    for (d, &gi) in db.iter_mut().zip(chunk) {
                        *d = *d + gi;
                    }
                }
                vec![(*input, g.to_vec()), (*bias, db)]
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                vec![(*input, dx)]
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gi;
                }
                vec![(*input, dx)]
            }
            Op::Reshape { input } => vec![(*input, g.to_vec())],
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, din, dout) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let mut out = Vec::new();
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); din * dout];
                    gemm(
                        din,
                        n,
                        dout,
                        x.data(),
                        Trans::Yes,
                        g,
                        Trans::No,
                        T::zero(),
                        &mut dw,
                    );
                    out.push((*weight, dw));
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); dout];
                    for row in g.chunks(dout) {
                        for (d, &gi) in db.iter_mut().zip(row) {
                            *d = *d + gi;
                        }
                    }
                    out.push((*bias, db));
                }
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); n * din];
                    gemm(
                        n,
                        dout,
                        din,
                        g,
                        Trans::No,
                        w.data(),
                        Trans::Yes,
                        T::zero(),
                        &mut dx,
                    );
                    out.push((*input, dx));
                }
                out
            }
            Op::Dropout { input, scale } => {
                let dx = g.iter().zip(scale).map(|(&gi, &s)| gi * s).collect();
                vec![(*input, dx)]
            }
            Op::L2Normalize { input, norms, eps } => {
                let dx = kernels::l2_normalize_rows_backward(g, node.value.data(), norms, *eps);
                vec![(*input, dx)]
            }
            Op::ContrastiveLoss {
                embeddings,
                labels,
                coeffs,
            } => {
                let e = self.value(*embeddings);
                let pairs = labels.len();
                let width = e.len() / (2 * pairs);
                let scale = g[0] / T::of_f64(pairs as f64);
                let mut de = vec![T::zero(); e.len()];
                for (i, &c) in coeffs.iter().enumerate() {
                    let (a, b) = (e.row(i), e.row(i + pairs));
                    for j in 0..width {
                        let v = scale * c * (a[j] - b[j]);
                        de[i * width + j] = v;
                        de[(i + pairs) * width + j] = -v;
                    }
                }
                vec![(*embeddings, de)]
            }
            Op::Square { input } => {
                let x = self.value(*input).data();
                let two = T::of_f64(2.0);
                let dx = x.iter().zip(g).map(|(&xi, &gi)| two * xi * gi).collect();
                vec![(*input, dx)]
            }
            Op::Sum { input } => vec![(*input, vec![g[0]; self.value(*input).len()])],
            Op::WeightedSum { input, weights } => {
                vec![(*input, weights.iter().map(|&w| w * g[0]).collect())]
            }
        }
    }
}
