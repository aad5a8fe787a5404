//! Forward and adjoint kernels for the spatial operators.
//!
//! These work on plain [`Tensor`]s and know nothing about the tape. The
//! im2col path is what the graph uses; [`conv2d_direct`] is the textbook
//! nested loop and is kept as a cross-check.

use super::{Real, Shape, Tensor, TensorError};

/// Span of a dilated kernel: `k + (k - 1)(d - 1)`.
pub const fn effective_kernel_size(kernel_size: usize, dilation: usize) -> usize {
    kernel_size + (kernel_size - 1) * (dilation - 1)
}

/// Non-tensor part of a convolution: kernel size, stride, padding, dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    /// 3×3 (or k×k) conv whose padding keeps the spatial size at stride 1.
    pub const fn same(kernel_size: usize, dilation: usize) -> Self {
        Self {
            kernel_size,
            stride: 1,
            padding: (effective_kernel_size(kernel_size, dilation) - 1) / 2,
            dilation,
        }
    }

    pub const fn pointwise(stride: usize) -> Self {
        Self {
            kernel_size: 1,
            stride,
            padding: 0,
            dilation: 1,
        }
    }

    pub const fn effective_kernel(&self) -> usize {
        effective_kernel_size(self.kernel_size, self.dilation)
    }

    fn validate(&self, op: &'static str) -> Result<(), TensorError> {
        if self.kernel_size == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(TensorError::Unsupported {
                op,
                reason: format!(
                    "kernel_size, stride and dilation must be >= 1 (got {}, {}, {})",
                    self.kernel_size, self.stride, self.dilation
                ),
            });
        }
        Ok(())
    }

    /// `floor((in + 2p - k_h) / s) + 1`.
    pub fn output_len(&self, op: &'static str, dim: &'static str, input: usize) -> Result<usize, TensorError> {
        self.validate(op)?;
        let padded = input + 2 * self.padding;
        let kh = self.effective_kernel();
        if kh > padded {
            return Err(TensorError::KernelTooLarge {
                op,
                dim,
                effective: kh,
                padded,
            });
        }
        Ok((padded - kh) / self.stride + 1)
    }
}

pub(crate) struct ConvDims {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub geom: ConvGeometry,
}

impl ConvDims {
    pub fn col_rows(&self) -> usize {
        self.in_c * self.geom.kernel_size * self.geom.kernel_size
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Pointwise stride-1 convs read the input directly as the column matrix.
    pub fn is_identity_unfold(&self) -> bool {
        self.geom.kernel_size == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }
}

pub(crate) fn conv_dims(
    input: Shape,
    kernel: Shape,
    bias: Option<Shape>,
    geom: ConvGeometry,
) -> Result<ConvDims, TensorError> {
    const OP: &str = "conv2d";
    if kernel.channels != input.channels {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "in_channels",
            left: input.channels,
            right: kernel.channels,
        });
    }
    if kernel.height != geom.kernel_size || kernel.width != geom.kernel_size {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "kernel_size",
            left: kernel.height.max(kernel.width),
            right: geom.kernel_size,
        });
    }
    if let Some(b) = bias {
        if b.numel() != kernel.batch {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "bias length",
                left: b.numel(),
                right: kernel.batch,
            });
        }
    }
    Ok(ConvDims {
        in_c: input.channels,
        in_h: input.height,
        in_w: input.width,
        out_c: kernel.batch,
        out_h: geom.output_len(OP, "height", input.height)?,
        out_w: geom.output_len(OP, "width", input.width)?,
        geom,
    })
}

/// Unfolds one batch item `(C, H, W)` into a `(C·k·k) × (OH·OW)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let ConvGeometry {
        kernel_size: k,
        stride,
        padding,
        dilation,
    } = d.geom;
    let n = d.col_cols();
    for c in 0..d.in_c {
        let plane = &x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oh in 0..d.out_h {
                    let ih = (oh * stride + ki * dilation) as isize - padding as isize;
                    let line = &mut dst[oh * d.out_w..(oh + 1) * d.out_w];
                    if ih < 0 || ih >= d.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * d.in_w..(ih as usize + 1) * d.in_w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * stride + kj * dilation) as isize - padding as isize;
                        *v = if iw < 0 || iw >= d.in_w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `(C, H, W)`.
pub(crate) fn col2im<T: Real>(cols: &[T], d: &ConvDims, x: &mut [T]) {
    let ConvGeometry {
        kernel_size: k,
        stride,
        padding,
        dilation,
    } = d.geom;
    let n = d.col_cols();
    for c in 0..d.in_c {
        let plane = &mut x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oh in 0..d.out_h {
                    let ih = (oh * stride + ki * dilation) as isize - padding as isize;
                    if ih < 0 || ih >= d.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * d.in_w..(ih as usize + 1) * d.in_w];
                    for ow in 0..d.out_w {
                        let iw = (ow * stride + kj * dilation) as isize - padding as isize;
                        if iw >= 0 && (iw as usize) < d.in_w {
                            dst[iw as usize] += src[oh * d.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution via im2col + GEMM. Returns the output and, when `keep_cols`
/// is set, the per-item column matrices for the backward pass.
pub(crate) fn conv2d_im2col<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
    keep_cols: bool,
) -> Result<(Tensor<T>, Vec<Vec<T>>), TensorError> {
    let d = conv_dims(input.shape(), kernel.shape(), bias.map(|b| b.shape()), geom)?;
    let batch = input.shape().batch;
    let out_shape = Shape::new(batch, d.out_c, d.out_h, d.out_w);
    let mut out = Tensor::zeros(out_shape);
    let (rows, n) = (d.col_rows(), d.col_cols());
    let mut saved = Vec::new();
    let mut scratch = Vec::new();
    for b in 0..batch {
        let x = &input.data()[b * input.shape().item()..(b + 1) * input.shape().item()];
        let y = &mut out.data_mut()[b * out_shape.item()..(b + 1) * out_shape.item()];
        if let Some(bias) = bias {
            for (o, plane) in y.chunks_mut(n).enumerate() {
                plane.fill(bias.data()[o]);
            }
        }
        let cols: &[T] = if d.is_identity_unfold() {
            x
        } else {
            scratch.resize(rows * n, T::zero());
            im2col(x, &d, &mut scratch);
            &scratch
        };
        T::gemm(
            d.out_c,
            rows,
            n,
            T::one(),
            kernel.data(),
            (rows as isize, 1),
            cols,
            (n as isize, 1),
            T::one(),
            y,
            (n as isize, 1),
        );
        if keep_cols && !d.is_identity_unfold() {
            saved.push(std::mem::take(&mut scratch));
        }
    }
    Ok((out, saved))
}

/// Public convolution entry point (im2col path, no tape).
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>, TensorError> {
    conv2d_im2col(input, kernel, bias, geom, false).map(|(out, _)| out)
}

/// Direct six-loop convolution. Slow, used as the reference.
pub fn conv2d_direct<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>, TensorError> {
    let d = conv_dims(input.shape(), kernel.shape(), bias.map(|b| b.shape()), geom)?;
    let batch = input.shape().batch;
    let k = geom.kernel_size;
    let mut out = Tensor::zeros([batch, d.out_c, d.out_h, d.out_w]);
    for b in 0..batch {
        for o in 0..d.out_c {
            for oh in 0..d.out_h {
                for ow in 0..d.out_w {
                    let mut acc = bias.map_or(T::zero(), |bias| bias.data()[o]);
                    for c in 0..d.in_c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ih = (oh * geom.stride + ki * geom.dilation) as isize
                                    - geom.padding as isize;
                                let iw = (ow * geom.stride + kj * geom.dilation) as isize
                                    - geom.padding as isize;
                                if ih < 0 || iw < 0 || ih >= d.in_h as isize || iw >= d.in_w as isize {
                                    continue;
                                }
                                acc += input.at(b, c, ih as usize, iw as usize) * kernel.at(o, c, ki, kj);
                            }
                        }
                    }
                    let off = out.offset(b, o, oh, ow);
                    out.data_mut()[off] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution w.r.t. input, kernel and bias.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeometry,
    cols: &[Vec<T>],
    grad_out: &Tensor<T>,
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> ConvGrads<T> {
    let d = conv_dims(input.shape(), kernel.shape(), None, geom).expect("validated on forward");
    let batch = input.shape().batch;
    let (rows, n) = (d.col_rows(), d.col_cols());
    let out_item = grad_out.shape().item();
    let mut g_in = want_input.then(|| Tensor::zeros(input.shape()));
    let mut g_k = want_kernel.then(|| Tensor::zeros(kernel.shape()));
    let mut g_b = want_bias.then(|| Tensor::zeros([d.out_c, 1, 1, 1]));
    let mut dcols = vec![T::zero(); if d.is_identity_unfold() { 0 } else { rows * n }];
    for b in 0..batch {
        let dy = &grad_out.data()[b * out_item..(b + 1) * out_item];
        if let Some(g_b) = g_b.as_mut() {
            for (o, plane) in dy.chunks(n).enumerate() {
                g_b.data_mut()[o] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(g_k) = g_k.as_mut() {
            let x_cols: &[T] = if d.is_identity_unfold() {
                &input.data()[b * input.shape().item()..(b + 1) * input.shape().item()]
            } else {
                &cols[b]
            };
            // dW (out × rows) += dY (out × n) · colsᵀ (n × rows)
            T::gemm(
                d.out_c,
                n,
                rows,
                T::one(),
                dy,
                (n as isize, 1),
                x_cols,
                (1, n as isize),
                T::one(),
                g_k.data_mut(),
                (rows as isize, 1),
            );
        }
        if let Some(g_in) = g_in.as_mut() {
            let item = input.shape().item();
            let dx = &mut g_in.data_mut()[b * item..(b + 1) * item];
            if d.is_identity_unfold() {
                // dX (rows × n) = Wᵀ (rows × out) · dY (out × n)
                T::gemm(
                    rows,
                    d.out_c,
                    n,
                    T::one(),
                    kernel.data(),
                    (1, rows as isize),
                    dy,
                    (n as isize, 1),
                    T::one(),
                    dx,
                    (n as isize, 1),
                );
            } else {
                T::gemm(
                    rows,
                    d.out_c,
                    n,
                    T::one(),
                    kernel.data(),
                    (1, rows as isize),
                    dy,
                    (n as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (n as isize, 1),
                );
                col2im(&dcols, &d, dx);
            }
        }
    }
    ConvGrads {
        input: g_in,
        kernel: g_k,
        bias: g_b,
    }
}

pub(crate) fn check_transposed(
    input: Shape,
    kernel: Shape,
    bias: Option<Shape>,
    geom: ConvGeometry,
) -> Result<(), TensorError> {
    const OP: &str = "transposed_conv2d";
    if geom.kernel_size != 2 || geom.stride != 2 || geom.dilation != 1 || geom.padding != 0 {
        return Err(TensorError::Unsupported {
            op: OP,
            reason: format!(
                "only kernel 2, stride 2, dilation 1, padding 0 upsampling is implemented (got {geom:?})"
            ),
        });
    }
    if kernel.batch != input.channels {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "in_channels",
            left: input.channels,
            right: kernel.batch,
        });
    }
    if kernel.height != 2 || kernel.width != 2 {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "kernel_size",
            left: kernel.height.max(kernel.width),
            right: 2,
        });
    }
    if let Some(b) = bias {
        if b.numel() != kernel.channels {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "bias length",
                left: b.numel(),
                right: kernel.channels,
            });
        }
    }
    Ok(())
}

/// ×2 learned upsampling. The kernel is laid out `(in, out, 2, 2)`.
pub fn transposed_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>, TensorError> {
    check_transposed(input.shape(), kernel.shape(), bias.map(|b| b.shape()), geom)?;
    let s = input.shape();
    let out_c = kernel.shape().channels;
    let (h, w) = (s.height, s.width);
    let n = h * w;
    let m = out_c * 4;
    let mut out = Tensor::zeros([s.batch, out_c, 2 * h, 2 * w]);
    let out_item = out.shape().item();
    let mut cols = vec![T::zero(); m * n];
    for b in 0..s.batch {
        let x = &input.data()[b * s.item()..(b + 1) * s.item()];
        // cols (out·4 × n) = Wᵀ (out·4 × in) · X (in × n)
        T::gemm(
            m,
            s.channels,
            n,
            T::one(),
            kernel.data(),
            (1, m as isize),
            x,
            (n as isize, 1),
            T::zero(),
            &mut cols,
            (n as isize, 1),
        );
        let y = &mut out.data_mut()[b * out_item..(b + 1) * out_item];
        for o in 0..out_c {
            let bias_v = bias.map_or(T::zero(), |bias| bias.data()[o]);
            for a in 0..2 {
                for c in 0..2 {
                    let row = &cols[((o * 2 + a) * 2 + c) * n..((o * 2 + a) * 2 + c + 1) * n];
                    for i in 0..h {
                        for j in 0..w {
                            y[(o * 2 * h + 2 * i + a) * 2 * w + 2 * j + c] = row[i * w + j] + bias_v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn transposed_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> ConvGrads<T> {
    let s = input.shape();
    let out_c = kernel.shape().channels;
    let (h, w) = (s.height, s.width);
    let n = h * w;
    let m = out_c * 4;
    let out_item = grad_out.shape().item();
    let mut g_in = want_input.then(|| Tensor::zeros(s));
    let mut g_k = want_kernel.then(|| Tensor::zeros(kernel.shape()));
    let mut g_b = want_bias.then(|| Tensor::zeros([out_c, 1, 1, 1]));
    let mut dcols = vec![T::zero(); m * n];
    for b in 0..s.batch {
        let dy = &grad_out.data()[b * out_item..(b + 1) * out_item];
        for o in 0..out_c {
            let mut bsum = T::zero();
            for a in 0..2 {
                for c in 0..2 {
                    let row = &mut dcols[((o * 2 + a) * 2 + c) * n..((o * 2 + a) * 2 + c + 1) * n];
                    for i in 0..h {
                        for j in 0..w {
                            let v = dy[(o * 2 * h + 2 * i + a) * 2 * w + 2 * j + c];
                            row[i * w + j] = v;
                            bsum += v;
                        }
                    }
                }
            }
            if let Some(g_b) = g_b.as_mut() {
                g_b.data_mut()[o] += bsum;
            }
        }
        let x = &input.data()[b * s.item()..(b + 1) * s.item()];
        if let Some(g_k) = g_k.as_mut() {
            // dW (in × out·4) += X (in × n) · dcolsᵀ (n × out·4)
            T::gemm(
                s.channels,
                n,
                m,
                T::one(),
                x,
                (n as isize, 1),
                &dcols,
                (1, n as isize),
                T::one(),
                g_k.data_mut(),
                (m as isize, 1),
            );
        }
        if let Some(g_in) = g_in.as_mut() {
            T::gemm(
                s.channels,
                m,
                n,
                T::one(),
                kernel.data(),
                (m as isize, 1),
                &dcols,
                (n as isize, 1),
                T::one(),
                &mut g_in.data_mut()[b * s.item()..(b + 1) * s.item()],
                (n as isize, 1),
            );
        }
    }
    ConvGrads {
        input: g_in,
        kernel: g_k,
        bias: g_b,
    }
}

/// Non-overlapping max pooling. Returns the output and the flat input index
/// of each selected maximum (first occurrence in row-major order on ties).
pub fn max_pool2d<T: Real>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    const OP: &str = "max_pool2d";
    let s = input.shape();
    if window == 0 {
        return Err(TensorError::Unsupported {
            op: OP,
            reason: "window must be >= 1".into(),
        });
    }
    for (dim, size) in [("height", s.height), ("width", s.width)] {
        if size % window != 0 {
            return Err(TensorError::NotDivisible {
                op: OP,
                dim,
                size,
                window,
            });
        }
    }
    let (oh, ow) = (s.height / window, s.width / window);
    let mut out = Tensor::zeros([s.batch, s.channels, oh, ow]);
    let mut argmax = Vec::with_capacity(out.numel());
    let mut o = 0;
    for plane in 0..s.batch * s.channels {
        let base = plane * s.plane();
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * window * s.width + j * window;
                for di in 0..window {
                    for dj in 0..window {
                        let idx = base + (i * window + di) * s.width + j * window + dj;
                        if input.data()[idx] > input.data()[best] {
                            best = idx;
                        }
                    }
                }
                out.data_mut()[o] = input.data()[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(input: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = input.shape();
    let (oh, ow) = (s.height * factor, s.width * factor);
    let mut out = Tensor::zeros([s.batch, s.channels, oh, ow]);
    for plane in 0..s.batch * s.channels {
        let src = &input.data()[plane * s.plane()..(plane + 1) * s.plane()];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / factor) * s.width + j / factor];
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward<T: Real>(grad_out: &Tensor<T>, input: Shape, factor: usize) -> Tensor<T> {
    let mut g = Tensor::zeros(input);
    let (oh, ow) = (input.height * factor, input.width * factor);
    for plane in 0..input.batch * input.channels {
        let src = &grad_out.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut g.data_mut()[plane * input.plane()..(plane + 1) * input.plane()];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / factor) * input.width + j / factor] += src[i * ow + j];
            }
        }
    }
    g
}
