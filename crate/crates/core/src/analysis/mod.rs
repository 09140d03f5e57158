//! Symbolic receptive-field propagation and parameter/MAC accounting.
//!
//! A [`SymbolicGraph`] mirrors the structure of a network without carrying
//! any values. Receptive fields are tracked as sets of odd window sizes: a
//! `k x k` convolution maps every size `v` to `v + (k - 1) * jump`, where
//! `jump` is the product of all strides seen so far, and merges take set
//! unions. FLOPs are reported as multiply-accumulates (1 MAC = 1 FLOP); only
//! convolutions contribute, elementwise work, pooling and resizing are free.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

mod calibrate;
mod runtime;
mod symbolic_net;
mod templates;

pub use calibrate::{ablation_variant, calibrate_width, AblationResult, WidthSearch};
pub use runtime::{runtime_census, runtime_cost};
pub use symbolic_net::{symbolic_network, symbolic_rsb};
pub use templates::{block_template, table2_row, BlockTemplate, TABLE2_TEMPLATES};

/// Relative receptive-field sizes reaching a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RfSet {
    values: BTreeSet<u64>,
    /// Some path passes through a global pooling.
    pub global: bool,
}

impl RfSet {
    pub fn unit() -> Self {
        RfSet {
            values: [1].into_iter().collect(),
            global: false,
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = u64>) -> Self {
        RfSet {
            values: values.into_iter().collect(),
            global: false,
        }
    }

    pub fn values(&self) -> impl Iterator<Item = u64> + '_ {
        self.values.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<u64> {
        self.values.iter().copied().collect()
    }

    pub fn min(&self) -> u64 {
        *self.values.first().expect("non-empty")
    }

    pub fn max(&self) -> u64 {
        *self.values.last().expect("non-empty")
    }

    fn grow(&self, by: u64) -> Self {
        RfSet {
            values: self.values.iter().map(|v| v + by).collect(),
            global: self.global,
        }
    }

    fn union(&mut self, other: &RfSet) {
        self.values.extend(other.values.iter().copied());
        self.global |= other.global;
    }
}

impl fmt::Display for RfSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        if self.global {
            f.write_str(",global")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymKind {
    Input,
    Conv {
        k: usize,
        stride: usize,
        depthwise: bool,
        bias: bool,
        bn: bool,
    },
    Add,
    Mul,
    Concat,
    Slice { start: usize, len: usize },
    MaxPool,
    GlobalPool,
    Upsample { factor: usize },
    Relu,
    Sigmoid,
}

impl SymKind {
    pub fn conv(k: usize, stride: usize, bn: bool) -> Self {
        SymKind::Conv {
            k,
            stride,
            depthwise: false,
            bias: !bn,
            bn,
        }
    }

    /// Stable description used for node census comparisons.
    pub fn describe(&self) -> String {
        match *self {
            SymKind::Input => "input".into(),
            SymKind::Conv { k, stride, depthwise, bias, bn } => format!(
                "{}{k}x{k}s{stride}{}{}",
                if depthwise { "dw" } else { "conv" },
                if bias { "+bias" } else { "" },
                if bn { "+bn" } else { "" }
            ),
            SymKind::Add => "add".into(),
            SymKind::Mul => "mul".into(),
            SymKind::Concat => "concat".into(),
            SymKind::Slice { .. } => "slice".into(),
            SymKind::MaxPool => "maxpool3x3s2".into(),
            SymKind::GlobalPool => "global_pool".into(),
            SymKind::Upsample { factor } => format!("upsample{factor}"),
            SymKind::Relu => "relu".into(),
            SymKind::Sigmoid => "sigmoid".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymNode {
    pub kind: SymKind,
    pub inputs: Vec<SymId>,
    /// Output channels; `None` when the graph is a shape-free template.
    pub channels: Option<usize>,
    pub label: Option<String>,
}

/// Structure-only network description used for receptive fields and cost.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolicGraph {
    nodes: Vec<SymNode>,
}

impl SymbolicGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[SymNode] {
        &self.nodes
    }

    pub fn node(&self, id: SymId) -> &SymNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn push(&mut self, kind: SymKind, inputs: &[SymId], channels: Option<usize>) -> SymId {
        self.nodes.push(SymNode {
            kind,
            inputs: inputs.to_vec(),
            channels,
            label: None,
        });
        SymId(self.nodes.len() - 1)
    }

    /// Add an edge `src -> dst` after the fact (may create cycles; propagation rejects them).
    pub fn connect(&mut self, src: SymId, dst: SymId) {
        self.nodes[dst.0].inputs.push(src);
    }

    pub fn set_label(&mut self, id: SymId, label: &str) {
        self.nodes[id.0].label = Some(label.to_string());
    }

    pub fn find(&self, label: &str) -> Option<SymId> {
        self.nodes
            .iter()
            .position(|n| n.label.as_deref() == Some(label))
            .map(SymId)
    }

    pub fn input(&mut self, channels: Option<usize>) -> SymId {
        self.push(SymKind::Input, &[], channels)
    }

    pub fn conv(&mut self, x: SymId, channels: Option<usize>, k: usize, stride: usize, bn: bool) -> SymId {
        self.push(SymKind::conv(k, stride, bn), &[x], channels)
    }

    pub fn relu(&mut self, x: SymId) -> SymId {
        let c = self.nodes[x.0].channels;
        self.push(SymKind::Relu, &[x], c)
    }

    pub fn add(&mut self, a: SymId, b: SymId) -> SymId {
        let c = self.nodes[a.0].channels;
        self.push(SymKind::Add, &[a, b], c)
    }

    pub fn concat(&mut self, xs: &[SymId]) -> SymId {
        let c = xs
            .iter()
            .map(|x| self.nodes[x.0].channels)
            .try_fold(0, |acc, c| c.map(|c| acc + c));
        self.push(SymKind::Concat, xs, c)
    }

    /// Topological order; rejects cycles and dangling edges.
    pub fn topo_order(&self) -> Result<Vec<SymId>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for s in &node.inputs {
                if s.0 >= n {
                    return Err(Error::Graph(format!("node {i} reads missing node {}", s.0)));
                }
                indeg[i] += 1;
                users[s.0].push(i);
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(SymId(i));
            for &u in users[i].iter().rev() {
                indeg[u] -= 1;
                if indeg[u] == 0 {
                    ready.push(u);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Graph("graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// Node counts keyed by [`SymKind::describe`].
    pub fn census(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.kind.describe()).or_insert(0) += 1;
        }
        m
    }
}

/// Receptive field and cumulative stride at a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfInfo {
    pub rf: RfSet,
    pub jump: u64,
}

/// Receptive-field sets of every node; inputs are seeded with `{1}`.
pub fn rf_propagate(g: &SymbolicGraph) -> Result<Vec<RfInfo>> {
    let order = g.topo_order()?;
    let mut info: Vec<Option<RfInfo>> = vec![None; g.len()];
    for id in order {
        let node = g.node(id);
        let get = |s: &SymId| info[s.0].clone().expect("topological order");
        let r = match node.kind {
            SymKind::Input => RfInfo {
                rf: RfSet::unit(),
                jump: 1,
            },
            SymKind::Conv { k, stride, .. } => {
                let x = single(node, id)?;
                let i = get(&x);
                RfInfo {
                    rf: i.rf.grow((k as u64 - 1) * i.jump),
                    jump: i.jump * stride as u64,
                }
            }
            SymKind::MaxPool => {
                let i = get(&single(node, id)?);
                RfInfo {
                    rf: i.rf.grow(2 * i.jump),
                    jump: i.jump * 2,
                }
            }
            SymKind::GlobalPool => {
                let mut i = get(&single(node, id)?);
                i.rf.global = true;
                i
            }
            SymKind::Upsample { factor } => {
                let i = get(&single(node, id)?);
                if i.jump % factor as u64 != 0 {
                    return Err(Error::Graph(format!(
                        "node {}: upsampling by {factor} below unit stride (jump {})",
                        id.0, i.jump
                    )));
                }
                RfInfo {
                    rf: i.rf,
                    jump: i.jump / factor as u64,
                }
            }
            SymKind::Slice { .. } | SymKind::Relu | SymKind::Sigmoid => get(&single(node, id)?),
            SymKind::Add | SymKind::Mul | SymKind::Concat => {
                if node.inputs.is_empty() {
                    return Err(Error::Graph(format!("node {}: merge without inputs", id.0)));
                }
                let parts: Vec<RfInfo> = node.inputs.iter().map(get).collect();
                // Globally pooled operands broadcast over space and impose no stride.
                let spatial: Vec<&RfInfo> = parts.iter().filter(|p| !p.rf.global).collect();
                let jump = spatial.first().map_or(parts[0].jump, |p| p.jump);
                if spatial.iter().any(|p| p.jump != jump) {
                    return Err(Error::Graph(format!("node {}: merging inputs with different strides", id.0)));
                }
                let mut rf = parts[0].rf.clone();
                for p in &parts[1..] {
                    rf.union(&p.rf);
                }
                RfInfo { rf, jump }
            }
        };
        info[id.0] = Some(r);
    }
    Ok(info.into_iter().map(|i| i.expect("visited")).collect())
}

fn single(node: &SymNode, id: SymId) -> Result<SymId> {
    match node.inputs.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Graph(format!(
            "node {} ({}) expects one input, has {}",
            id.0,
            node.kind.describe(),
            node.inputs.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostEntry {
    pub node: usize,
    pub kind: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CostReport {
    pub params: u64,
    /// Multiply-accumulates; reported as FLOPs.
    pub macs: u64,
    pub breakdown: Vec<CostEntry>,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.macs as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.params as f64 / 1e6
    }

    fn push(&mut self, e: CostEntry) {
        self.params += e.params;
        self.macs += e.macs;
        self.breakdown.push(e);
    }
}

/// Parameters and MACs of one convolution: `(weight params, extra params)`.
pub fn conv_cost(c_in: usize, c_out: usize, k: usize, groups: usize, bias: bool, bn: bool, out_hw: (usize, usize)) -> (u64, u64) {
    let w = (c_out * c_in * k * k / groups) as u64;
    let extra = if bias { c_out as u64 } else { 0 } + if bn { 2 * c_out as u64 } else { 0 };
    (w + extra, w * (out_hw.0 * out_hw.1) as u64)
}

/// Parameter and MAC totals for a graph whose inputs are `input_hw` (height, width).
pub fn count_cost(g: &SymbolicGraph, input_hw: (usize, usize)) -> Result<CostReport> {
    let order = g.topo_order()?;
    let mut hw: Vec<(usize, usize)> = vec![(0, 0); g.len()];
    let mut report = CostReport::default();
    let unresolved = |id: SymId| Error::Graph(format!("node {} has an unresolved channel count", id.0));
    for id in order {
        let node = g.node(id);
        let c_out = node.channels.ok_or_else(|| unresolved(id))?;
        let inp = node.inputs.first().copied();
        let in_hw = inp.map_or(input_hw, |s| hw[s.0]);
        hw[id.0] = match node.kind {
            SymKind::Input => input_hw,
            SymKind::Conv { k, stride, depthwise, bias, bn } => {
                let x = single(node, id)?;
                let c_in = g.node(x).channels.ok_or_else(|| unresolved(x))?;
                let pad = k / 2;
                let out = (
                    (in_hw.0 + 2 * pad).checked_sub(k).ok_or_else(|| too_small(id))? / stride + 1,
                    (in_hw.1 + 2 * pad).checked_sub(k).ok_or_else(|| too_small(id))? / stride + 1,
                );
                let groups = if depthwise { c_in } else { 1 };
                let (params, macs) = conv_cost(c_in, c_out, k, groups, bias, bn, out);
                report.push(CostEntry {
                    node: id.0,
                    kind: node.kind.describe(),
                    params,
                    macs,
                });
                out
            }
            SymKind::MaxPool => ((in_hw.0 - 1) / 2 + 1, (in_hw.1 - 1) / 2 + 1),
            SymKind::GlobalPool => (1, 1),
            SymKind::Upsample { factor } => (in_hw.0 * factor, in_hw.1 * factor),
            SymKind::Add | SymKind::Mul | SymKind::Concat => {
                // Spatial size of the first non-pooled operand.
                node.inputs
                    .iter()
                    .map(|s| hw[s.0])
                    .find(|&s| s != (1, 1))
                    .unwrap_or(in_hw)
            }
            SymKind::Slice { .. } | SymKind::Relu | SymKind::Sigmoid => in_hw,
        };
    }
    Ok(report)
}

fn too_small(id: SymId) -> Error {
    Error::Graph(format!("node {}: input smaller than kernel", id.0))
}
