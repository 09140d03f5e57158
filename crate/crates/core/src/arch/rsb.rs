use alloc::format;
use alloc::vec::Vec;

use super::RsbConfig;
use crate::graph::{Graph, NodeId};
use crate::{Error, Result};

/// Nodes of one block inside a larger graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RsbNodes {
    pub out: NodeId,
    /// Last unit of each branch, in branch order.
    pub y: Vec<NodeId>,
    /// `units[i][j]`: unit `j` of branch `i` after its activation.
    pub units: Vec<Vec<NodeId>>,
}

/// `conv -> [bn] -> [relu]`; the conv carries a bias only when no batchnorm follows.
pub(crate) fn conv_unit(
    g: &mut Graph,
    name: &str,
    x: NodeId,
    c_out: usize,
    k: usize,
    stride: usize,
    bn: bool,
    relu: bool,
) -> Result<NodeId> {
    let mut y = g.conv(&format!("{name}.conv"), x, c_out, k, stride, !bn)?;
    if bn {
        y = g.batchnorm(&format!("{name}.bn"), y)?;
    }
    if relu {
        y = g.relu(y)?;
    }
    Ok(y)
}

/// Append a residual steps block reading `x`; parameter names are prefixed by `name`.
pub fn rsb_into(g: &mut Graph, name: &str, cfg: &RsbConfig, x: NodeId) -> Result<RsbNodes> {
    cfg.validate()?;
    if g.channels(x) != cfg.in_channels {
        return Err(Error::DimMismatch {
            op: "rsb",
            dim: "input channels",
            expected: cfg.in_channels,
            actual: g.channels(x),
        });
    }
    let (b, w, bn) = (cfg.branches, cfg.branch_width, cfg.batchnorm);
    let part = cfg.in_channels / b;
    let mut splits: Vec<Option<NodeId>> = alloc::vec![None; b];
    for i in 0..b {
        let s = cfg.source_split(i);
        if splits[s].is_none() {
            splits[s] = Some(if b == 1 { x } else { g.slice(x, s * part, part)? });
        }
    }

    let mut units: Vec<Vec<NodeId>> = Vec::with_capacity(b);
    for i in 0..b {
        let src = splits[cfg.source_split(i)].expect("split created above");
        let mut cur = conv_unit(g, &format!("{name}.branch{i}.conv1x1"), src, w, 1, cfg.stride, bn, true)?;
        let mut chain = Vec::with_capacity(i + 1);
        for j in 0..=i {
            if cfg.has_cross(i, j) {
                cur = g.add(cur, units[i - 1][j])?;
            }
            cur = conv_unit(g, &format!("{name}.branch{i}.unit{j}"), cur, w, 3, 1, bn, true)?;
            chain.push(cur);
        }
        units.push(chain);
    }
    let y: Vec<NodeId> = units.iter().map(|c| *c.last().expect("non-empty")).collect();
    let cat = if b == 1 { y[0] } else { g.concat(&y)? };
    let fused = conv_unit(g, &format!("{name}.fuse"), cat, cfg.out_channels, 1, 1, bn, false)?;
    let shortcut = if cfg.projects() {
        conv_unit(g, &format!("{name}.proj"), x, cfg.out_channels, 1, cfg.stride, bn, false)?
    } else {
        x
    };
    let sum = g.add(fused, shortcut)?;
    let out = g.relu(sum)?;
    Ok(RsbNodes { out, y, units })
}
