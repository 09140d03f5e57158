//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of primitive nodes; every node's
//! operands precede it, so insertion order is a topological order. Parameter
//! values live outside the graph in a [`ParamStore`], which lets one graph be
//! evaluated against several parameter sets and keeps forward passes free of
//! mutation. A forward pass returns a [`Tape`] holding every node value and
//! the batchnorm statistics needed by [`Graph::backward`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::rng::{normal, stream};
use crate::tensor::ops::{self, Activation, BatchStats, BinaryOp, Pool};
use crate::{Error, Result, Scalar, Shape, Tensor};

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckEntry, GradCheckReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm uses batch statistics.
    Train,
    /// Batchnorm uses running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    HeNormal { fan_in: usize },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { index: usize },
    Conv {
        x: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        x: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        mean: BufferId,
        var: BufferId,
    },
    Binary { a: NodeId, b: NodeId, op: BinaryOp },
    Act { x: NodeId, kind: Activation },
    Pool { x: NodeId, kind: Pool },
    Resize { x: NodeId, factor: usize },
    Concat { xs: Vec<NodeId> },
    Slice { x: NodeId, start: usize, len: usize },
    Sum { x: NodeId },
}

impl Op {
    pub fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => Vec::new(),
            Op::Conv { x, .. }
            | Op::Depthwise { x, .. }
            | Op::BatchNorm { x, .. }
            | Op::Act { x, .. }
            | Op::Pool { x, .. }
            | Op::Resize { x, .. }
            | Op::Slice { x, .. }
            | Op::Sum { x } => vec![*x],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Concat { xs } => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct ParamInfo {
    name: String,
    shape: Shape,
    init: Init,
}

#[derive(Debug, Clone)]
struct BufferInfo {
    name: String,
    shape: Shape,
    value: f64,
}

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct Graph {
    id: u64,
    ops: Vec<Op>,
    channels: Vec<usize>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    params: Vec<ParamInfo>,
    buffers: Vec<BufferInfo>,
    names: BTreeMap<String, ()>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            ops: Vec::new(),
            channels: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            params: Vec::new(),
            buffers: Vec::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.ops[id.0]
    }

    pub fn ops(&self) -> impl Iterator<Item = (NodeId, &Op)> {
        self.ops.iter().enumerate().map(|(i, op)| (NodeId(i), op))
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.channels[id.0]
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn mark_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn param_shape(&self, id: ParamId) -> Shape {
        self.params[id.0].shape
    }

    /// Total number of scalar parameters.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.shape.numel()).sum()
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if self.names.insert(name.to_string(), ()).is_some() {
            return Err(Error::Graph(format!("duplicate name `{name}`")));
        }
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, shape: Shape, init: Init) -> Result<ParamId> {
        self.claim(name)?;
        self.params.push(ParamInfo {
            name: name.to_string(),
            shape,
            init,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    fn add_buffer(&mut self, name: &str, shape: Shape, value: f64) -> Result<BufferId> {
        self.claim(name)?;
        self.buffers.push(BufferInfo {
            name: name.to_string(),
            shape,
            value,
        });
        Ok(BufferId(self.buffers.len() - 1))
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.ops.len() {
            return Err(Error::Graph(format!("node {} does not exist", id.0)));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, channels: usize) -> NodeId {
        self.ops.push(op);
        self.channels.push(channels);
        NodeId(self.ops.len() - 1)
    }

    pub fn input(&mut self, channels: usize) -> NodeId {
        let index = self.inputs.len();
        let id = self.push(Op::Input { index }, channels);
        self.inputs.push(id);
        id
    }

    /// Dense `k x k` convolution with `pad = k / 2`; params `{name}.weight` and optionally `{name}.bias`.
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<NodeId> {
        self.check_node(x)?;
        if !ops::CONV_KERNELS.contains(&k) {
            return Err(Error::invalid("conv", format!("unsupported kernel size {k}")));
        }
        if stride == 0 || c_out == 0 {
            return Err(Error::invalid("conv", "stride and output channels must be positive"));
        }
        let c_in = self.channels(x);
        let weight = self.add_param(
            &format!("{name}.weight"),
            Shape::new(c_out, c_in, k, k),
            Init::HeNormal { fan_in: c_in * k * k },
        )?;
        let bias = if bias {
            Some(self.add_param(&format!("{name}.bias"), Shape::channels(c_out), Init::Constant(0.0))?)
        } else {
            None
        };
        Ok(self.push(
            Op::Conv {
                x,
                weight,
                bias,
                stride,
                pad: k / 2,
            },
            c_out,
        ))
    }

    /// Depthwise `k x k` convolution (odd `k`) with `pad = k / 2`.
    pub fn depthwise(&mut self, name: &str, x: NodeId, k: usize, stride: usize, bias: bool) -> Result<NodeId> {
        self.check_node(x)?;
        if k % 2 == 0 || stride == 0 {
            return Err(Error::invalid("depthwise", "kernel must be odd and stride positive"));
        }
        let c = self.channels(x);
        let weight = self.add_param(
            &format!("{name}.weight"),
            Shape::new(c, 1, k, k),
            Init::HeNormal { fan_in: k * k },
        )?;
        let bias = if bias {
            Some(self.add_param(&format!("{name}.bias"), Shape::channels(c), Init::Constant(0.0))?)
        } else {
            None
        };
        Ok(self.push(
            Op::Depthwise {
                x,
                weight,
                bias,
                stride,
                pad: k / 2,
            },
            c,
        ))
    }

    pub fn batchnorm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.check_node(x)?;
        let c = self.channels(x);
        let gamma = self.add_param(&format!("{name}.gamma"), Shape::channels(c), Init::Constant(1.0))?;
        let beta = self.add_param(&format!("{name}.beta"), Shape::channels(c), Init::Constant(0.0))?;
        let mean = self.add_buffer(&format!("{name}.running_mean"), Shape::channels(c), 0.0)?;
        let var = self.add_buffer(&format!("{name}.running_var"), Shape::channels(c), 1.0)?;
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
            },
            c,
        ))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: BinaryOp) -> Result<NodeId> {
        self.check_node(a)?;
        self.check_node(b)?;
        let (ca, cb) = (self.channels(a), self.channels(b));
        if ca != cb {
            return Err(Error::DimMismatch {
                op: "elementwise",
                dim: "channels",
                expected: ca,
                actual: cb,
            });
        }
        Ok(self.push(Op::Binary { a, b, op }, ca))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryOp::Mul)
    }

    fn unary(&mut self, x: NodeId, op: Op) -> Result<NodeId> {
        self.check_node(x)?;
        let c = self.channels(x);
        Ok(self.push(op, c))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Act { x, kind: Activation::Relu })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Act { x, kind: Activation::Sigmoid })
    }

    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Pool { x, kind: Pool::Max3x3S2 })
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Pool { x, kind: Pool::GlobalAvg })
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor < 2 {
            return Err(Error::invalid("upsample", format!("factor must be at least 2, got {factor}")));
        }
        self.unary(x, Op::Resize { x, factor })
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let mut c = 0;
        for &x in xs {
            self.check_node(x)?;
            c += self.channels(x);
        }
        Ok(self.push(Op::Concat { xs: xs.to_vec() }, c))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check_node(x)?;
        if len == 0 || start + len > self.channels(x) {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} outside {} channels", start + len, self.channels(x)),
            ));
        }
        Ok(self.push(Op::Slice { x, start, len }, len))
    }

    pub fn split(&mut self, x: NodeId, parts: usize) -> Result<Vec<NodeId>> {
        self.check_node(x)?;
        let c = self.channels(x);
        if parts == 0 || c % parts != 0 {
            return Err(Error::Indivisible {
                what: "split input",
                channels: c,
                parts,
            });
        }
        let len = c / parts;
        (0..parts).map(|i| self.slice(x, i * len, len)).collect()
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_node(x)?;
        Ok(self.push(Op::Sum { x }, 1))
    }

    /// Fresh parameters: He-normal weights from per-parameter streams of `seed`, constants elsewhere.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> ParamStore<S> {
        let params = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| match p.init {
                Init::HeNormal { fan_in } => {
                    let mut rng = stream(seed, &[0x7061_7261_6d73, i as u64]);
                    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
                    let data = (0..p.shape.numel())
                        .map(|_| S::from_f64(normal(&mut rng) * std))
                        .collect();
                    Tensor::new(p.shape, data).expect("parameter shape")
                }
                Init::Constant(v) => Tensor::full(p.shape, S::from_f64(v)),
            })
            .collect();
        let buffers = self
            .buffers
            .iter()
            .map(|b| Tensor::full(b.shape, S::from_f64(b.value)))
            .collect();
        ParamStore {
            graph_id: self.id,
            param_names: self.params.iter().map(|p| p.name.clone()).collect(),
            buffer_names: self.buffers.iter().map(|b| b.name.clone()).collect(),
            params,
            buffers,
        }
    }

    /// Output shape of every node for the given input shapes, without evaluating anything.
    pub fn infer_shapes(&self, inputs: &[Shape]) -> Result<Vec<Shape>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Graph(format!(
                "expected {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let s = match op {
                Op::Input { index } => {
                    let s = inputs[*index];
                    if s.c != self.channels[i] {
                        return Err(Error::DimMismatch {
                            op: "input",
                            dim: "channels",
                            expected: self.channels[i],
                            actual: s.c,
                        });
                    }
                    s
                }
                Op::Conv { x, weight, stride, pad, .. } | Op::Depthwise { x, weight, stride, pad, .. } => {
                    let xs = shapes[x.0];
                    let k = self.params[weight.0].shape.h;
                    let ho = ops::window_out(xs.h, k, *stride, *pad);
                    let wo = ops::window_out(xs.w, k, *stride, *pad);
                    match (ho, wo) {
                        (Some(ho), Some(wo)) => Shape::new(xs.n, self.channels[i], ho, wo),
                        _ => return Err(Error::invalid("conv", format!("input {xs} too small for {k}x{k}"))),
                    }
                }
                Op::Pool { x, kind: Pool::Max3x3S2 } => {
                    let xs = shapes[x.0];
                    if xs.h < 3 || xs.w < 3 {
                        return Err(Error::invalid("max_pool", format!("input {xs} below 3x3")));
                    }
                    Shape::new(xs.n, xs.c, (xs.h - 1) / 2 + 1, (xs.w - 1) / 2 + 1)
                }
                Op::Pool { x, kind: Pool::GlobalAvg } => {
                    let xs = shapes[x.0];
                    Shape::new(xs.n, xs.c, 1, 1)
                }
                Op::Resize { x, factor } => {
                    let xs = shapes[x.0];
                    Shape::new(xs.n, xs.c, xs.h * factor, xs.w * factor)
                }
                Op::BatchNorm { x, .. } | Op::Act { x, .. } => shapes[x.0],
                Op::Binary { a, b, .. } => {
                    let (sa, sb) = (shapes[a.0], shapes[b.0]);
                    let ok = sa == sb || (sb.h == 1 && sb.w == 1 && (sb.n == 1 || sb.n == sa.n));
                    if !ok {
                        return Err(Error::ShapeMismatch {
                            op: "elementwise",
                            lhs: sa,
                            rhs: sb,
                        });
                    }
                    sa
                }
                Op::Concat { xs } => {
                    let f = shapes[xs[0].0];
                    for x in xs {
                        let s = shapes[x.0];
                        if (s.n, s.h, s.w) != (f.n, f.h, f.w) {
                            return Err(Error::ShapeMismatch {
                                op: "concat",
                                lhs: f,
                                rhs: s,
                            });
                        }
                    }
                    Shape::new(f.n, self.channels[i], f.h, f.w)
                }
                Op::Slice { x, len, .. } => {
                    let xs = shapes[x.0];
                    Shape::new(xs.n, *len, xs.h, xs.w)
                }
                Op::Sum { .. } => Shape::scalar(),
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Evaluate every node. Parameters are only read.
    pub fn forward<S: Scalar>(&self, params: &ParamStore<S>, inputs: &[Tensor<S>], mode: Mode) -> Result<Tape<S>> {
        if params.graph_id != self.id {
            return Err(Error::Graph("parameter store belongs to a different graph".into()));
        }
        if inputs.len() != self.inputs.len() {
            return Err(Error::Graph(format!(
                "expected {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let mut values: Vec<Tensor<S>> = Vec::with_capacity(self.ops.len());
        let mut stats: Vec<Option<BatchStats<S>>> = vec![None; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            let v = |id: &NodeId| &values[id.0];
            let out = match op {
                Op::Input { index } => {
                    let t = &inputs[*index];
                    if t.shape().c != self.channels[i] {
                        return Err(Error::DimMismatch {
                            op: "input",
                            dim: "channels",
                            expected: self.channels[i],
                            actual: t.shape().c,
                        });
                    }
                    let mut t = t.clone();
                    t.clear_grad();
                    t
                }
                Op::Conv { x, weight, bias, stride, pad } => ops::conv2d(
                    v(x),
                    params.param(*weight),
                    bias.map(|b| params.param(b)),
                    *stride,
                    *pad,
                )?,
                Op::Depthwise { x, weight, bias, stride, pad } => ops::depthwise_conv2d(
                    v(x),
                    params.param(*weight),
                    bias.map(|b| params.param(b)),
                    *stride,
                    *pad,
                )?,
                Op::BatchNorm { x, gamma, beta, mean, var } => match mode {
                    Mode::Train => {
                        let (y, s) = ops::batchnorm_train(v(x), params.param(*gamma), params.param(*beta))?;
                        stats[i] = Some(s);
                        y
                    }
                    Mode::Eval => ops::batchnorm_eval(
                        v(x),
                        params.param(*gamma),
                        params.param(*beta),
                        params.buffer(*mean),
                        params.buffer(*var),
                    )?,
                },
                Op::Binary { a, b, op } => ops::elementwise(v(a), v(b), *op)?,
                Op::Act { x, kind } => ops::activation(v(x), *kind),
                Op::Pool { x, kind } => ops::pool(v(x), *kind)?,
                Op::Resize { x, factor } => ops::resize_nearest(v(x), *factor)?,
                Op::Concat { xs } => {
                    let refs: Vec<&Tensor<S>> = xs.iter().map(|x| &values[x.0]).collect();
                    ops::channel_concat(&refs)?
                }
                Op::Slice { x, start, len } => ops::channel_slice(v(x), *start, *len)?,
                Op::Sum { x } => Tensor::scalar(v(x).sum()),
            };
            values.push(out);
        }
        Ok(Tape {
            graph_id: self.id,
            mode,
            values,
            stats,
        })
    }

    /// Gradients of a scalar node; see [`Graph::backward_seeded`].
    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamStore<S>,
        tape: &Tape<S>,
        loss: NodeId,
    ) -> Result<Vec<Tensor<S>>> {
        self.check_tape(tape)?;
        self.check_node(loss)?;
        let l = tape.value(loss);
        if l.numel() != 1 {
            return Err(Error::invalid("backward", format!("loss must be a scalar, got {}", l.shape())));
        }
        self.backward_seeded(params, tape, &[(loss, Tensor::full(l.shape(), S::ONE))])
    }

    fn check_tape<S>(&self, tape: &Tape<S>) -> Result<()> {
        if tape.graph_id != self.id || tape.values.len() != self.ops.len() {
            return Err(Error::NoForward);
        }
        Ok(())
    }

    /// Reverse-mode accumulation from upstream gradients `seeds` on arbitrary nodes.
    ///
    /// Parameter gradients are zeroed first and then written into each parameter's
    /// gradient buffer. Returns the gradient with respect to each graph input.
    pub fn backward_seeded<S: Scalar>(
        &self,
        params: &mut ParamStore<S>,
        tape: &Tape<S>,
        seeds: &[(NodeId, Tensor<S>)],
    ) -> Result<Vec<Tensor<S>>> {
        self.check_tape(tape)?;
        if params.graph_id != self.id {
            return Err(Error::Graph("parameter store belongs to a different graph".into()));
        }
        for p in &mut params.params {
            p.zero_grad();
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.ops.len()];
        for (id, g) in seeds {
            self.check_node(*id)?;
            if g.shape() != tape.value(*id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "backward seed",
                    lhs: tape.value(*id).shape(),
                    rhs: g.shape(),
                });
            }
            accumulate(&mut grads[id.0], g.clone());
        }
        let mut input_grads: Vec<Option<Tensor<S>>> = vec![None; self.inputs.len()];
        let vals = &tape.values;
        for i in (0..self.ops.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Input { index } => input_grads[*index] = Some(g),
                Op::Conv { x, weight, bias, stride, pad } => {
                    let r = ops::conv2d_backward(
                        &vals[x.0],
                        params.param(*weight),
                        bias.is_some(),
                        &g,
                        *stride,
                        *pad,
                        true,
                    )?;
                    add_grad(params.param_mut(*weight), &r.dweight);
                    if let (Some(b), Some(db)) = (bias, &r.dbias) {
                        add_grad(params.param_mut(*b), db);
                    }
                    accumulate(&mut grads[x.0], r.dx.expect("requested"));
                }
                Op::Depthwise { x, weight, bias, stride, pad } => {
                    let r = ops::depthwise_conv2d_backward(
                        &vals[x.0],
                        params.param(*weight),
                        bias.is_some(),
                        &g,
                        *stride,
                        *pad,
                        true,
                    )?;
                    add_grad(params.param_mut(*weight), &r.dweight);
                    if let (Some(b), Some(db)) = (bias, &r.dbias) {
                        add_grad(params.param_mut(*b), db);
                    }
                    accumulate(&mut grads[x.0], r.dx.expect("requested"));
                }
                Op::BatchNorm { x, gamma, beta, mean, var } => {
                    let (dx, dg, db) = match tape.mode {
                        Mode::Train => {
                            let s = tape.stats[i].as_ref().ok_or(Error::NoForward)?;
                            ops::batchnorm_train_backward(&vals[x.0], params.param(*gamma), s, &g)
                        }
                        Mode::Eval => ops::batchnorm_eval_backward(
                            &vals[x.0],
                            params.param(*gamma),
                            params.buffer(*mean),
                            params.buffer(*var),
                            &g,
                        ),
                    };
                    add_grad(params.param_mut(*gamma), &dg);
                    add_grad(params.param_mut(*beta), &db);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Binary { a, b, op } => {
                    let (da, db) = ops::elementwise_backward(&vals[a.0], &vals[b.0], *op, &g)?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Act { x, kind } => {
                    accumulate(&mut grads[x.0], ops::activation_backward(&vals[i], *kind, &g));
                }
                Op::Pool { x, kind } => {
                    accumulate(&mut grads[x.0], ops::pool_backward(&vals[x.0], *kind, &g)?);
                }
                Op::Resize { x, factor } => {
                    let xs = vals[x.0].shape();
                    accumulate(&mut grads[x.0], ops::resize_nearest_backward(xs, *factor, &g));
                }
                Op::Concat { xs } => {
                    let mut start = 0;
                    for x in xs {
                        let len = vals[x.0].shape().c;
                        accumulate(&mut grads[x.0], ops::channel_slice(&g, start, len)?);
                        start += len;
                    }
                }
                Op::Slice { x, start, .. } => {
                    let xs = vals[x.0].shape();
                    let mut d = vec![S::ZERO; xs.numel()];
                    ops::channel_slice_backward(&mut d, xs, *start, &g);
                    accumulate(&mut grads[x.0], Tensor::new(xs, d)?);
                }
                Op::Sum { x } => {
                    accumulate(&mut grads[x.0], Tensor::full(vals[x.0].shape(), g.data()[0]));
                }
            }
        }
        Ok(input_grads
            .into_iter()
            .zip(&self.inputs)
            .map(|(g, id)| g.unwrap_or_else(|| Tensor::zeros(vals[id.0].shape())))
            .collect())
    }

    /// Fold the batch statistics recorded on a training tape into the running buffers.
    pub fn update_running_stats<S: Scalar>(&self, params: &mut ParamStore<S>, tape: &Tape<S>) -> Result<()> {
        self.check_tape(tape)?;
        for (i, op) in self.ops.iter().enumerate() {
            if let (Op::BatchNorm { mean, var, .. }, Some(s)) = (op, &tape.stats[i]) {
                let (lo, hi) = (mean.0.min(var.0), mean.0.max(var.0));
                let (left, right) = params.buffers.split_at_mut(hi);
                let (a, b) = (&mut left[lo], &mut right[0]);
                let (m, v) = if mean.0 < var.0 { (a, b) } else { (b, a) };
                ops::update_running_stats(m, v, s);
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, t: Tensor<S>) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        None => *slot = Some(t),
    }
}

fn add_grad<S: Scalar>(p: &mut Tensor<S>, g: &Tensor<S>) {
    for (a, &b) in p.grad_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Node values (and batch statistics) recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    graph_id: u64,
    mode: Mode,
    values: Vec<Tensor<S>>,
    stats: Vec<Option<BatchStats<S>>>,
}

impl<S: Scalar> Tape<S> {
    /// A tape that belongs to no graph; backward on it fails with [`Error::NoForward`].
    pub fn empty() -> Self {
        Tape {
            graph_id: 0,
            mode: Mode::Eval,
            values: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn take(self, id: NodeId) -> Tensor<S> {
        self.values.into_iter().nth(id.0).expect("node on tape")
    }
}

/// Named parameter tensors and non-trainable buffers for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    graph_id: u64,
    param_names: Vec<String>,
    buffer_names: Vec<String>,
    params: Vec<Tensor<S>>,
    buffers: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn param(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<S> {
        &self.buffers[id.0]
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Tensor<S>] {
        &self.buffers
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.param_names.iter().position(|n| n == name).map(ParamId)
    }

    /// `(name, tensor)` pairs for parameters followed by buffers.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.param_names
            .iter()
            .map(String::as_str)
            .zip(&self.params)
            .chain(self.buffer_names.iter().map(String::as_str).zip(&self.buffers))
    }

    /// Overwrite a parameter or buffer by name; the shape must match.
    pub fn assign(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let slot = if let Some(i) = self.param_names.iter().position(|n| n == name) {
            &mut self.params[i]
        } else if let Some(i) = self.buffer_names.iter().position(|n| n == name) {
            &mut self.buffers[i]
        } else {
            return Err(Error::Graph(format!("unknown tensor `{name}`")));
        };
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "assign",
                lhs: slot.shape(),
                rhs: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            graph_id: self.graph_id,
            param_names: self.param_names.clone(),
            buffer_names: self.buffer_names.clone(),
            params: self.params.iter().map(|t| t.cast()).collect(),
            buffers: self.buffers.iter().map(|t| t.cast()).collect(),
        }
    }
}
