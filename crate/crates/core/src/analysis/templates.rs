use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{rf_propagate, symbolic_rsb, RfSet, SymId, SymKind, SymbolicGraph};
use crate::arch::{FusionMode, RsbConfig};
use crate::{Error, Result};

/// Canonical single-block structures compared by receptive field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTemplate {
    /// Bottleneck: one 3x3 convolution, its output read as four quarters.
    ResNet,
    /// Omni-scale block: streams of 1..4 stacked lite 3x3 convolutions.
    OsNet,
    /// Hierarchical residual-like splits.
    Res2Net,
    /// Residual steps block with the given number of branches and fusion mode.
    Rsn { branches: usize, fusion: FusionMode },
}

/// Rows of the receptive-field comparison, in the order they are printed.
pub const TABLE2_TEMPLATES: [BlockTemplate; 4] = [
    BlockTemplate::ResNet,
    BlockTemplate::OsNet,
    BlockTemplate::Res2Net,
    BlockTemplate::Rsn {
        branches: 4,
        fusion: FusionMode::Rsn,
    },
];

impl BlockTemplate {
    pub fn name(&self) -> String {
        match self {
            BlockTemplate::ResNet => "resnet".into(),
            BlockTemplate::OsNet => "osnet".into(),
            BlockTemplate::Res2Net => "res2net".into(),
            BlockTemplate::Rsn {
                fusion: FusionMode::Rsn,
                ..
            } => "rsn".into(),
            BlockTemplate::Rsn { fusion, .. } => fusion.as_str().into(),
        }
    }

    pub fn parse(name: &str, branches: usize) -> Result<Self> {
        let rsn = |fusion| BlockTemplate::Rsn { branches, fusion };
        match name {
            "resnet" => Ok(BlockTemplate::ResNet),
            "osnet" => Ok(BlockTemplate::OsNet),
            "res2net" => Ok(BlockTemplate::Res2Net),
            "rsn" => Ok(rsn(FusionMode::Rsn)),
            "baseline1" => Ok(rsn(FusionMode::Baseline1)),
            "baseline2" => Ok(rsn(FusionMode::Baseline2)),
            _ => Err(Error::Config(format!("unknown block template `{name}`"))),
        }
    }
}

impl fmt::Display for BlockTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn quarter(g: &mut SymbolicGraph, x: SymId, i: usize) -> SymId {
    g.push(SymKind::Slice { start: i, len: 1 }, &[x], None)
}

fn conv_relu(g: &mut SymbolicGraph, x: SymId, k: usize) -> SymId {
    let c = g.conv(x, None, k, 1, false);
    g.relu(c)
}

fn close_block(g: &mut SymbolicGraph, input: SymId, ys: &[SymId]) {
    let cat = g.concat(ys);
    let fused = g.conv(cat, None, 1, 1, false);
    let sum = g.add(fused, input);
    g.relu(sum);
}

/// Shape-free graph of one block with its four (or `B`) outputs labelled `y1..`.
pub fn block_template(t: BlockTemplate) -> Result<SymbolicGraph> {
    let mut g = SymbolicGraph::new();
    let x = g.input(None);
    match t {
        BlockTemplate::ResNet => {
            let reduce = conv_relu(&mut g, x, 1);
            let mid = conv_relu(&mut g, reduce, 3);
            let ys: Vec<SymId> = (0..4).map(|i| quarter(&mut g, mid, i)).collect();
            for (i, &y) in ys.iter().enumerate() {
                g.set_label(y, &format!("y{}", i + 1));
            }
            close_block(&mut g, x, &ys);
        }
        BlockTemplate::Res2Net => {
            let reduce = conv_relu(&mut g, x, 1);
            let xs: Vec<SymId> = (0..4).map(|i| quarter(&mut g, reduce, i)).collect();
            let mut ys = Vec::with_capacity(4);
            ys.push(xs[0]);
            let mut prev = conv_relu(&mut g, xs[1], 3);
            ys.push(prev);
            for &xi in &xs[2..] {
                let s = g.add(xi, prev);
                prev = conv_relu(&mut g, s, 3);
                ys.push(prev);
            }
            for (i, &y) in ys.iter().enumerate() {
                g.set_label(y, &format!("y{}", i + 1));
            }
            close_block(&mut g, x, &ys);
        }
        BlockTemplate::OsNet => {
            let reduce = conv_relu(&mut g, x, 1);
            let mut ys = Vec::with_capacity(4);
            for t in 1..=4 {
                let mut cur = reduce;
                for _ in 0..t {
                    // Lite 3x3: pointwise then depthwise.
                    let p = g.conv(cur, None, 1, 1, false);
                    let d = g.push(
                        SymKind::Conv {
                            k: 3,
                            stride: 1,
                            depthwise: true,
                            bias: false,
                            bn: true,
                        },
                        &[p],
                        None,
                    );
                    cur = g.relu(d);
                }
                g.set_label(cur, &format!("y{t}"));
                ys.push(cur);
            }
            let mut agg = ys[0];
            for &y in &ys[1..] {
                agg = g.add(agg, y);
            }
            let fused = g.conv(agg, None, 1, 1, false);
            let sum = g.add(fused, x);
            g.relu(sum);
        }
        BlockTemplate::Rsn { branches, fusion } => {
            let cfg = RsbConfig {
                in_channels: branches,
                out_channels: branches,
                branches,
                branch_width: 1,
                stride: 1,
                fusion,
                batchnorm: false,
            };
            symbolic_rsb(&mut g, x, &cfg, false)?;
        }
    }
    Ok(g)
}

/// `(label, receptive field)` for each labelled output `y1..` of a template.
pub fn table2_row(t: BlockTemplate) -> Result<Vec<(String, RfSet)>> {
    let g = block_template(t)?;
    let rf = rf_propagate(&g)?;
    let mut out = Vec::new();
    for i in 1.. {
        let label = format!("y{i}");
        match g.find(&label) {
            Some(id) => out.push((label, rf[id.0].rf.clone())),
            None => break,
        }
    }
    Ok(out)
}
