use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{CostEntry, CostReport, SymKind};
use crate::graph::{Graph, Op};
use crate::tensor::ops::{Activation, BinaryOp, Pool};
use crate::{Result, Shape};

/// For each node, the batchnorm node that directly consumes it (if any).
fn bn_consumers(g: &Graph) -> Vec<Option<usize>> {
    let mut out = vec![None; g.len()];
    for (id, op) in g.ops() {
        if let Op::BatchNorm { x, .. } = op {
            out[x.index()] = Some(id.index());
        }
    }
    out
}

fn describe(g: &Graph, op: &Op, has_bn: bool) -> Option<String> {
    let kind = match op {
        Op::Input { .. } => SymKind::Input,
        Op::Conv { weight, bias, stride, .. } => SymKind::Conv {
            k: g.param_shape(*weight).h,
            stride: *stride,
            depthwise: false,
            bias: bias.is_some(),
            bn: has_bn,
        },
        Op::Depthwise { weight, bias, stride, .. } => SymKind::Conv {
            k: g.param_shape(*weight).h,
            stride: *stride,
            depthwise: true,
            bias: bias.is_some(),
            bn: has_bn,
        },
        Op::BatchNorm { .. } => return None,
        Op::Binary { op: BinaryOp::Add, .. } => SymKind::Add,
        Op::Binary { op: BinaryOp::Mul, .. } => SymKind::Mul,
        Op::Act { kind: Activation::Relu, .. } => SymKind::Relu,
        Op::Act { kind: Activation::Sigmoid, .. } => SymKind::Sigmoid,
        Op::Pool { kind: Pool::Max3x3S2, .. } => SymKind::MaxPool,
        Op::Pool { kind: Pool::GlobalAvg, .. } => SymKind::GlobalPool,
        Op::Resize { factor, .. } => SymKind::Upsample { factor: *factor },
        Op::Concat { .. } => SymKind::Concat,
        Op::Slice { start, len, .. } => SymKind::Slice { start: *start, len: *len },
        Op::Sum { .. } => return Some("sum".into()),
    };
    Some(kind.describe())
}

/// Node counts of a built graph, with each batchnorm folded into the convolution it follows.
pub fn runtime_census(g: &Graph) -> BTreeMap<String, usize> {
    let bn = bn_consumers(g);
    let mut m = BTreeMap::new();
    for (id, op) in g.ops() {
        if let Some(d) = describe(g, op, bn[id.index()].is_some()) {
            *m.entry(d).or_insert(0) += 1;
        }
    }
    m
}

/// Cost of a built graph for a single sample of each input shape.
pub fn runtime_cost(g: &Graph, inputs: &[Shape]) -> Result<CostReport> {
    let single: Vec<Shape> = inputs.iter().map(|s| Shape::new(1, s.c, s.h, s.w)).collect();
    let shapes = g.infer_shapes(&single)?;
    let bn = bn_consumers(g);
    let mut report = CostReport::default();
    for (id, op) in g.ops() {
        let (weight, bias) = match op {
            Op::Conv { weight, bias, .. } | Op::Depthwise { weight, bias, .. } => (*weight, *bias),
            _ => continue,
        };
        let w = g.param_shape(weight).numel() as u64;
        let mut params = w + bias.map_or(0, |b| g.param_shape(b).numel() as u64);
        if let Some(b) = bn[id.index()] {
            if let Op::BatchNorm { gamma, beta, .. } = g.op(crate::graph::NodeId(b)) {
                params += (g.param_shape(*gamma).numel() + g.param_shape(*beta).numel()) as u64;
            }
        }
        let out = shapes[id.index()];
        report.push(CostEntry {
            node: id.index(),
            kind: describe(g, op, bn[id.index()].is_some()).expect("conv"),
            params,
            macs: w * out.plane() as u64,
        });
    }
    Ok(report)
}
