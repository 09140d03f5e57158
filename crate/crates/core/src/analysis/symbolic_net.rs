use alloc::format;
use alloc::vec::Vec;

use super::{SymId, SymKind, SymbolicGraph};
use crate::arch::{NetworkConfig, RsbConfig};
use crate::Result;

fn unit(g: &mut SymbolicGraph, x: SymId, c: Option<usize>, k: usize, stride: usize, bn: bool, relu: bool) -> SymId {
    let y = g.conv(x, c, k, stride, bn);
    if relu {
        g.relu(y)
    } else {
        y
    }
}

/// Structure of one block. With `concrete == false` all channel counts are left
/// unresolved (template use). Branch outputs are labelled `y1..yB`.
pub fn symbolic_rsb(g: &mut SymbolicGraph, x: SymId, cfg: &RsbConfig, concrete: bool) -> Result<(SymId, Vec<SymId>)> {
    cfg.validate()?;
    let ch = |c: usize| concrete.then_some(c);
    let b = cfg.branches;
    let part = cfg.in_channels / b;
    let bn = cfg.batchnorm;

    let mut split: Vec<Option<SymId>> = alloc::vec![None; b];
    let mut chains: Vec<Vec<SymId>> = Vec::with_capacity(b);
    for i in 0..b {
        let s = cfg.source_split(i);
        let src = match split[s] {
            Some(id) => id,
            None => {
                let id = if b == 1 {
                    x
                } else {
                    g.push(SymKind::Slice { start: s * part, len: part }, &[x], ch(part))
                };
                split[s] = Some(id);
                id
            }
        };
        let mut cur = unit(g, src, ch(cfg.branch_width), 1, cfg.stride, bn, true);
        let mut chain = Vec::with_capacity(i + 1);
        for j in 0..=i {
            if cfg.has_cross(i, j) {
                let other: SymId = chains[i - 1][j];
                cur = g.add(cur, other);
            }
            cur = unit(g, cur, ch(cfg.branch_width), 3, 1, bn, true);
            chain.push(cur);
        }
        g.set_label(cur, &format!("y{}", i + 1));
        chains.push(chain);
    }
    let ys: Vec<SymId> = chains.iter().map(|c| c[c.len() - 1]).collect();
    let cat = if b == 1 { ys[0] } else { g.concat(&ys) };
    let fused = unit(g, cat, ch(cfg.out_channels), 1, 1, bn, false);
    let short = if cfg.projects() {
        unit(g, x, ch(cfg.out_channels), 1, cfg.stride, bn, false)
    } else {
        x
    };
    let sum = g.add(fused, short);
    Ok((g.relu(sum), ys))
}

fn symbolic_prm(g: &mut SymbolicGraph, x: SymId, c: usize, bn: bool) -> SymId {
    let k = unit(g, x, Some(c), 3, 1, bn, true);
    let gp = g.push(SymKind::GlobalPool, &[k], Some(c));
    let a = g.conv(gp, Some(c), 1, 1, false);
    let a = g.relu(a);
    let a = g.conv(a, Some(c), 1, 1, false);
    let alpha = g.push(SymKind::Sigmoid, &[a], Some(c));
    let b = g.conv(k, Some(c), 1, 1, false);
    let b = g.push(
        SymKind::Conv {
            k: 9,
            stride: 1,
            depthwise: true,
            bias: true,
            bn: false,
        },
        &[b],
        Some(c),
    );
    let beta = g.push(SymKind::Sigmoid, &[b], Some(c));
    let gate = g.push(SymKind::Mul, &[beta, alpha], Some(c));
    let scaled = g.push(SymKind::Mul, &[k, gate], Some(c));
    g.add(k, scaled)
}

/// Structure of the full cascade described by `cfg`, with concrete channel counts.
/// Stage heatmaps are labelled `heatmap{t}`.
pub fn symbolic_network(cfg: &NetworkConfig) -> Result<SymbolicGraph> {
    cfg.validate()?;
    let bn = cfg.batchnorm;
    let hc = cfg.head_channels;
    let mut g = SymbolicGraph::new();
    let mut x = g.input(Some(3));
    for t in 0..cfg.stages {
        let mut cur = if t == 0 {
            let s = unit(&mut g, x, Some(cfg.stem_channels), 7, 2, bn, true);
            g.push(SymKind::MaxPool, &[s], Some(cfg.stem_channels))
        } else {
            unit(&mut g, x, Some(cfg.stem_channels), 3, 1, bn, true)
        };
        let mut levels = Vec::with_capacity(4);
        for l in 0..4 {
            for b in 0..cfg.blocks[l] {
                cur = symbolic_rsb(&mut g, cur, &cfg.block(l, b), true)?.0;
            }
            levels.push(cur);
        }
        let mut top = unit(&mut g, levels[3], Some(hc), 1, 1, bn, false);
        for l in (0..3).rev() {
            let up = g.push(SymKind::Upsample { factor: 2 }, &[top], Some(hc));
            let lat = unit(&mut g, levels[l], Some(hc), 1, 1, bn, false);
            top = g.add(up, lat);
        }
        let features = unit(&mut g, top, Some(hc), 3, 1, bn, true);
        let pre = if cfg.prm && t + 1 == cfg.stages {
            symbolic_prm(&mut g, features, hc, bn)
        } else {
            features
        };
        let hm = g.conv(pre, Some(cfg.keypoints), 1, 1, false);
        g.set_label(hm, &format!("heatmap{t}"));
        x = features;
    }
    Ok(g)
}
