//! The two modules the variants add on top of a plain U-Net: the ASPP
//! bottleneck and the attention gate on skip connections.

use crate::tensor::{ConvGeometry, Graph, Real, TensorError, Var};

/// A convolution bound to graph variables.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub weight: Var,
    pub bias: Option<Var>,
    pub geom: ConvGeometry,
}

impl ConvParams {
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, TensorError> {
        g.conv2d(x, self.weight, self.bias, self.geom)
    }

    pub fn out_channels<T: Real>(&self, g: &Graph<T>) -> usize {
        g.shape(self.weight).batch
    }
}

/// `project(branch_1(x) ⊕ … ⊕ branch_n(x))`.
///
/// Every branch must preserve the spatial size and `project` must be a 1×1
/// convolution. No activation is applied inside; callers add their own.
pub fn aspp_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    branches: &[ConvParams],
    project: &ConvParams,
) -> Result<Var, TensorError> {
    const OP: &str = "aspp";
    if branches.is_empty() {
        return Err(TensorError::Unsupported {
            op: OP,
            reason: "at least one branch is required".into(),
        });
    }
    if project.geom.kernel_size != 1 {
        return Err(TensorError::Unsupported {
            op: OP,
            reason: format!("projection must be 1×1, got {0}×{0}", project.geom.kernel_size),
        });
    }
    let input = g.shape(x);
    let mut outs = Vec::with_capacity(branches.len());
    for branch in branches {
        let y = branch.apply(g, x)?;
        let s = g.shape(y);
        for (dim, l, r) in [("branch height", input.height, s.height), ("branch width", input.width, s.width)] {
            if l != r {
                return Err(TensorError::ShapeMismatch { op: OP, dim, left: l, right: r });
            }
        }
        outs.push(y);
    }
    let fused = g.concat_channels(&outs)?;
    project.apply(g, fused)
}

/// Parameters of one attention gate: `theta` projects the encoder feature
/// (1×1, stride 2), `phi` the coarser decoder feature (1×1), and `psi`
/// reduces to the one-channel compatibility map.
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub theta: ConvParams,
    pub phi: ConvParams,
    pub psi: ConvParams,
}

/// Intermediate maps of one gate evaluation.
#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    /// Compatibility map `C` at the coarse resolution.
    pub compat: Var,
    /// `α = sigmoid(C)`, coarse resolution, in (0, 1).
    pub alpha: Var,
    /// `α` resampled to the encoder resolution.
    pub weights: Var,
    /// `F = A + α⊙A`.
    pub output: Var,
}

/// Gates encoder feature `a` with context from the decoder feature `b`,
/// whose spatial size is half of `a`'s.
pub fn attention_gate<T: Real>(g: &mut Graph<T>, a: Var, b: Var, p: &GateParams) -> Result<GateOutput, TensorError> {
    const OP: &str = "attention_gate";
    let (sa, sb) = (g.shape(a), g.shape(b));
    for (dim, fine, coarse) in [("height", sa.height, sb.height), ("width", sa.width, sb.width)] {
        if fine != 2 * coarse {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim,
                left: fine,
                right: 2 * coarse,
            });
        }
    }
    if p.theta.geom.stride != 2 || p.theta.geom.kernel_size != 1 {
        return Err(TensorError::Unsupported {
            op: OP,
            reason: "theta must be a 1×1 stride-2 convolution".into(),
        });
    }
    let (ct, cp) = (p.theta.out_channels(g), p.phi.out_channels(g));
    if ct != cp {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "projected channels",
            left: ct,
            right: cp,
        });
    }
    if p.psi.out_channels(g) != 1 {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "compatibility channels",
            left: p.psi.out_channels(g),
            right: 1,
        });
    }
    let ta = p.theta.apply(g, a)?;
    let pb = p.phi.apply(g, b)?;
    let sum = g.add(ta, pb)?;
    let act = g.relu(sum);
    let compat = p.psi.apply(g, act)?;
    let alpha = g.sigmoid(compat);
    let weights = g.upsample_nearest(alpha, 2)?;
    let gated = g.mul_broadcast(a, weights)?;
    let output = g.add(a, gated)?;
    Ok(GateOutput {
        compat,
        alpha,
        weights,
        output,
    })
}
