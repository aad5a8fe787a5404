use super::kernels::{self, ConvGeometry};
use super::{Real, Shape, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for reporting and for the backward fault hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    TransposedConv2d,
    MaxPool2d,
    UpsampleNearest,
    Relu,
    Sigmoid,
    SoftmaxChannels,
    ConcatChannels,
    Add,
    Mul,
    MulBroadcast,
    Sum,
    SoftmaxCrossEntropy,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 13] = [
        OpKind::Conv2d,
        OpKind::TransposedConv2d,
        OpKind::MaxPool2d,
        OpKind::UpsampleNearest,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::SoftmaxChannels,
        OpKind::ConcatChannels,
        OpKind::Add,
        OpKind::Mul,
        OpKind::MulBroadcast,
        OpKind::Sum,
        OpKind::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::TransposedConv2d => "transposed_conv2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::UpsampleNearest => "upsample_nearest",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::SoftmaxChannels => "softmax_channels",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::MulBroadcast => "mul_broadcast",
            OpKind::Sum => "sum",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<Vec<T>>,
    },
    TransposedConv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    UpsampleNearest {
        input: Var,
        factor: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxChannels(Var),
    ConcatChannels(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    MulBroadcast {
        input: Var,
        weights: Var,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<u8>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::TransposedConv2d { .. } => OpKind::TransposedConv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::UpsampleNearest { .. } => OpKind::UpsampleNearest,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::SoftmaxChannels(_) => OpKind::SoftmaxChannels,
            Op::ConcatChannels(_) => OpKind::ConcatChannels,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::MulBroadcast { .. } => OpKind::MulBroadcast,
            Op::Sum(_) => OpKind::Sum,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// True when a gradient has to flow through this node.
    tracked: bool,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Recording tape for one forward pass.
///
/// Nodes are appended in execution order, so reverse index order is a valid
/// topological order for the backward sweep. Leaves created with
/// [`Graph::parameter`] accumulate gradients across repeated
/// [`Graph::backward`] calls until [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of one op kind (gradients scaled by 1.5).
    /// Exists so the gradient checker can be shown to catch a broken rule.
    pub fn inject_backward_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a parameter leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var, TensorError> {
        let tracked = self.tracked(input) || self.tracked(kernel) || bias.is_some_and(|b| self.tracked(b));
        let keep_cols = self.tracked(kernel);
        let (out, cols) = kernels::conv2d_im2col(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            geom,
            keep_cols,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            tracked,
        ))
    }

    /// ×2 upsampling transposed convolution (kernel layout `(in, out, 2, 2)`).
    pub fn transposed_conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var, TensorError> {
        let tracked = self.tracked(input) || self.tracked(kernel) || bias.is_some_and(|b| self.tracked(b));
        let out = kernels::transposed_conv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        Ok(self.push(out, Op::TransposedConv2d { input, kernel, bias }, tracked))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize) -> Result<Var, TensorError> {
        let (out, argmax) = kernels::max_pool2d(self.value(input), window)?;
        let tracked = self.tracked(input);
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, tracked))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var, TensorError> {
        if factor == 0 {
            return Err(TensorError::Unsupported {
                op: "upsample_nearest",
                reason: "factor must be >= 1".into(),
            });
        }
        let out = kernels::upsample_nearest(self.value(input), factor);
        let tracked = self.tracked(input);
        Ok(self.push(out, Op::UpsampleNearest { input, factor }, tracked))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let tracked = self.tracked(input);
        self.push(out, Op::Relu(input), tracked)
    }

    /// Logistic function, evaluated without overflow and clamped so the
    /// result is never exactly 0 or 1.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(stable_sigmoid);
        let tracked = self.tracked(input);
        self.push(out, Op::Sigmoid(input), tracked)
    }

    /// Softmax across the channel axis at every pixel.
    pub fn softmax_channels(&mut self, input: Var) -> Var {
        let out = softmax_channels(self.value(input));
        let tracked = self.tracked(input);
        self.push(out, Op::SoftmaxChannels(input), tracked)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        const OP: &str = "concat_channels";
        let first = *inputs.first().ok_or(TensorError::Unsupported {
            op: OP,
            reason: "no inputs".into(),
        })?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            for (dim, l, r) in [
                ("batch", s0.batch, s.batch),
                ("height", s0.height, s.height),
                ("width", s0.width, s.width),
            ] {
                if l != r {
                    return Err(TensorError::ShapeMismatch { op: OP, dim, left: l, right: r });
                }
            }
            channels += s.channels;
        }
        let out_shape = Shape::new(s0.batch, channels, s0.height, s0.width);
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..s0.batch {
            for &v in inputs {
                let t = self.value(v);
                let item = t.shape().item();
                out.extend_from_slice(&t.data()[b * item..(b + 1) * item]);
            }
        }
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        let out = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(out, Op::ConcatChannels(inputs.to_vec()), tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        for (dim, l, r) in [
            ("batch", sa.batch, sb.batch),
            ("channels", sa.channels, sb.channels),
            ("height", sa.height, sb.height),
            ("width", sa.width, sb.width),
        ] {
            if l != r {
                return Err(TensorError::ShapeMismatch { op, dim, left: l, right: r });
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Mul(a, b), tracked))
    }

    /// Multiplies every channel of `input` by a single-channel map.
    pub fn mul_broadcast(&mut self, input: Var, weights: Var) -> Result<Var, TensorError> {
        const OP: &str = "mul_broadcast";
        let (s, ws) = (self.shape(input), self.shape(weights));
        for (dim, l, r) in [
            ("weight channels", 1, ws.channels),
            ("batch", s.batch, ws.batch),
            ("height", s.height, ws.height),
            ("width", s.width, ws.width),
        ] {
            if l != r {
                return Err(TensorError::ShapeMismatch { op: OP, dim, left: l, right: r });
            }
        }
        let plane = s.plane();
        let mut out = self.value(input).clone();
        let w = self.value(weights).data();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = i / s.channels;
            let wp = &w[b * plane..(b + 1) * plane];
            for (v, &a) in chunk.iter_mut().zip(wp) {
                *v *= a;
            }
        }
        let tracked = self.tracked(input) || self.tracked(weights);
        Ok(self.push(out, Op::MulBroadcast { input, weights }, tracked))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let total: T = self.value(input).data().iter().copied().sum();
        let tracked = self.tracked(input);
        self.push(Tensor::scalar(total), Op::Sum(input), tracked)
    }

    /// Mean per-pixel negative log-likelihood of `labels` under a channel
    /// softmax of `logits`. `labels` is `(batch, height, width)` row-major.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        let pixels = s.batch * s.plane();
        if labels.len() != pixels {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                dim: "label count",
                left: labels.len(),
                right: pixels,
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= s.channels) {
            return Err(TensorError::InvalidLabel { index, label });
        }
        let x = self.value(logits);
        let plane = s.plane();
        let mut probs = Tensor::zeros(s);
        let mut total = 0.0f64;
        for b in 0..s.batch {
            for p in 0..plane {
                let at = |c: usize| b * s.item() + c * plane + p;
                let max = (0..s.channels).map(|c| x.data()[at(c)]).fold(T::neg_infinity(), T::max);
                let denom: T = (0..s.channels).map(|c| (x.data()[at(c)] - max).exp()).sum();
                let log_denom = denom.ln();
                for c in 0..s.channels {
                    probs.data_mut()[at(c)] = (x.data()[at(c)] - max).exp() / denom;
                }
                let label = labels[b * plane + p] as usize;
                total += (log_denom - (x.data()[at(label)] - max)).as_f64();
            }
        }
        let loss = T::from_f64(total / pixels as f64);
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into parameter leaves.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let s = self.shape(loss);
        if s.numel() != 1 {
            return Err(TensorError::NonScalarLoss(s));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(s, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if self.nodes[i].requires_grad {
                    match &mut self.nodes[i].grad {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                continue;
            }
            let mut contributions = self.node_backward(i, &g);
            if self.fault == Some(self.nodes[i].op.kind()) {
                let k = T::from_f64(1.5);
                for (_, t) in &mut contributions {
                    *t = t.map(|v| v * k);
                }
            }
            for (v, t) in contributions {
                if !self.nodes[v.0].tracked {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let grads = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    *geom,
                    cols,
                    g,
                    self.tracked(*input),
                    self.tracked(*kernel),
                    bias.is_some_and(|b| self.tracked(b)),
                );
                push_grads(&mut out, *input, *kernel, *bias, grads, |b| self.shape(b));
            }
            Op::TransposedConv2d { input, kernel, bias } => {
                let grads = kernels::transposed_conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    self.tracked(*input),
                    self.tracked(*kernel),
                    bias.is_some_and(|b| self.tracked(b)),
                );
                push_grads(&mut out, *input, *kernel, *bias, grads, |b| self.shape(b));
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = Tensor::zeros(self.shape(*input));
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[idx] += gv;
                }
                out.push((*input, dx));
            }
            Op::UpsampleNearest { input, factor } => {
                out.push((*input, kernels::upsample_nearest_backward(g, self.shape(*input), *factor)));
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*input, Tensor::from_vec(x.shape(), data).expect("same shape")));
            }
            Op::Sigmoid(input) => {
                let y = &node.value;
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                out.push((*input, Tensor::from_vec(y.shape(), data).expect("same shape")));
            }
            Op::SoftmaxChannels(input) => {
                let y = &node.value;
                let s = y.shape();
                let plane = s.plane();
                let mut dx = Tensor::zeros(s);
                for b in 0..s.batch {
                    for p in 0..plane {
                        let at = |c: usize| b * s.item() + c * plane + p;
                        let dot: T = (0..s.channels).map(|c| g.data()[at(c)] * y.data()[at(c)]).sum();
                        for c in 0..s.channels {
                            dx.data_mut()[at(c)] = y.data()[at(c)] * (g.data()[at(c)] - dot);
                        }
                    }
                }
                out.push((*input, dx));
            }
            Op::ConcatChannels(inputs) => {
                let sizes: Vec<usize> = inputs.iter().map(|&v| self.shape(v).channels).collect();
                let parts = g.split_channels(&sizes).expect("concat shapes");
                out.extend(inputs.iter().copied().zip(parts));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = vb.data().iter().zip(g.data()).map(|(&y, &g)| y * g).collect();
                let gb = va.data().iter().zip(g.data()).map(|(&x, &g)| x * g).collect();
                out.push((*a, Tensor::from_vec(va.shape(), ga).expect("same shape")));
                out.push((*b, Tensor::from_vec(vb.shape(), gb).expect("same shape")));
            }
            Op::MulBroadcast { input, weights } => {
                let x = self.value(*input);
                let w = self.value(*weights);
                let s = x.shape();
                let plane = s.plane();
                let mut gx = g.clone();
                let mut gw = Tensor::zeros(w.shape());
                for (idx, chunk) in gx.data_mut().chunks_mut(plane).enumerate() {
                    let b = idx / s.channels;
                    let wp = &w.data()[b * plane..(b + 1) * plane];
                    let xp = &x.data()[idx * plane..(idx + 1) * plane];
                    let gwp = &mut gw.data_mut()[b * plane..(b + 1) * plane];
                    for p in 0..plane {
                        gwp[p] += chunk[p] * xp[p];
                        chunk[p] *= wp[p];
                    }
                }
                out.push((*input, gx));
                out.push((*weights, gw));
            }
            Op::Sum(input) => {
                out.push((*input, Tensor::full(self.shape(*input), g.item())));
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let s = probs.shape();
                let plane = s.plane();
                let scale = g.item() / T::from_f64((s.batch * plane) as f64);
                let mut dx = probs.clone();
                for b in 0..s.batch {
                    for p in 0..plane {
                        let label = labels[b * plane + p] as usize;
                        dx.data_mut()[b * s.item() + label * plane + p] -= T::one();
                    }
                }
                for v in dx.data_mut() {
                    *v *= scale;
                }
                out.push((*logits, dx));
            }
        }
        out
    }
}

fn push_grads<T: Real>(
    out: &mut Vec<(Var, Tensor<T>)>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    grads: kernels::ConvGrads<T>,
    shape_of: impl Fn(Var) -> Shape,
) {
    if let Some(g) = grads.input {
        out.push((input, g));
    }
    if let Some(g) = grads.kernel {
        out.push((kernel, g));
    }
    if let (Some(b), Some(g)) = (bias, grads.bias) {
        out.push((b, g.reshape(shape_of(b)).expect("bias length checked on forward")));
    }
}

pub(crate) fn stable_sigmoid<T: Real>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (e + T::one())
    };
    let upper = T::one() - T::epsilon() / T::from_f64(2.0);
    y.max(T::min_positive_value()).min(upper)
}

pub(crate) fn softmax_channels<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for b in 0..s.batch {
        for p in 0..plane {
            let at = |c: usize| b * s.item() + c * plane + p;
            let max = (0..s.channels).map(|c| x.data()[at(c)]).fold(T::neg_infinity(), T::max);
            let denom: T = (0..s.channels).map(|c| (x.data()[at(c)] - max).exp()).sum();
            for c in 0..s.channels {
                out.data_mut()[at(c)] = (x.data()[at(c)] - max).exp() / denom;
            }
        }
    }
    out
}
