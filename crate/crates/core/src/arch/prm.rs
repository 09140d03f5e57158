use alloc::format;

use super::rsb::conv_unit;
use crate::graph::{Graph, NodeId};
use crate::{Error, Result, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrmNodes {
    pub out: NodeId,
    /// Output of the leading 3x3 convolution.
    pub k: NodeId,
    /// Channel weights, `(N, C, 1, 1)`.
    pub alpha: NodeId,
    /// Spatial attention map, same shape as `k`.
    pub beta: NodeId,
}

/// Append a pose refine machine: `out = K(x) * (1 + beta * alpha)`, width preserving.
pub fn prm_into(g: &mut Graph, name: &str, x: NodeId, bn: bool) -> Result<PrmNodes> {
    let c = g.channels(x);
    let k = conv_unit(g, &format!("{name}.k"), x, c, 3, 1, bn, true)?;

    let pooled = g.global_avg_pool(k)?;
    let a = g.conv(&format!("{name}.alpha1"), pooled, c, 1, 1, true)?;
    let a = g.relu(a)?;
    let a = g.conv(&format!("{name}.alpha2"), a, c, 1, 1, true)?;
    let alpha = g.sigmoid(a)?;

    let b = g.conv(&format!("{name}.beta1"), k, c, 1, 1, true)?;
    let b = g.depthwise(&format!("{name}.beta_dw"), b, 9, 1, true)?;
    let beta = g.sigmoid(b)?;

    // K * (1 + beta * alpha) written as K + K * (beta * alpha).
    let gate = g.mul(beta, alpha)?;
    let scaled = g.mul(k, gate)?;
    let out = g.add(k, scaled)?;
    Ok(PrmNodes { out, k, alpha, beta })
}

/// `kx * (1 + beta * alpha)` with `alpha` broadcast per channel.
pub fn prm_combine<S: Scalar>(kx: &Tensor<S>, alpha: &Tensor<S>, beta: &Tensor<S>) -> Result<Tensor<S>> {
    let s = kx.shape();
    if beta.shape() != s {
        return Err(Error::ShapeMismatch {
            op: "prm_combine beta",
            lhs: s,
            rhs: beta.shape(),
        });
    }
    let a = alpha.shape();
    let per_sample = a == Shape::new(s.n, s.c, 1, 1);
    if !(per_sample || a == Shape::channels(s.c)) {
        return Err(Error::ShapeMismatch {
            op: "prm_combine alpha",
            lhs: Shape::channels(s.c),
            rhs: a,
        });
    }
    Ok(Tensor::from_fn(s, |n, c, h, w| {
        let av = alpha.at(if per_sample { n } else { 0 }, c, 0, 0);
        kx.at(n, c, h, w) * (S::ONE + beta.at(n, c, h, w) * av)
    }))
}
