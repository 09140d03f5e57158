//! Finite-difference gradient suite over every differentiable primitive, whole
//! residual steps blocks and the pose refine machine.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{prm_into, rsb_into, FusionMode, RsbConfig};
use crate::graph::{grad_check, GradCheckConfig};
use crate::graph::{Graph, Mode, NodeId, ParamStore};
use crate::rng::stream;
use crate::{Result, Shape, Tensor};

/// Single-op graphs exercised by [`check_primitive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Conv,
    ConvStrided,
    Depthwise,
    BatchNormTrain,
    BatchNormEval,
    Add,
    AddBroadcast,
    Mul,
    MulBroadcast,
    Relu,
    Sigmoid,
    MaxPool,
    GlobalPool,
    Upsample,
    Concat,
    Slice,
    Sum,
}

impl Primitive {
    pub const ALL: [Primitive; 17] = [
        Primitive::Conv,
        Primitive::ConvStrided,
        Primitive::Depthwise,
        Primitive::BatchNormTrain,
        Primitive::BatchNormEval,
        Primitive::Add,
        Primitive::AddBroadcast,
        Primitive::Mul,
        Primitive::MulBroadcast,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::MaxPool,
        Primitive::GlobalPool,
        Primitive::Upsample,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Conv => "conv",
            Primitive::ConvStrided => "conv_strided",
            Primitive::Depthwise => "depthwise",
            Primitive::BatchNormTrain => "batchnorm_train",
            Primitive::BatchNormEval => "batchnorm_eval",
            Primitive::Add => "add",
            Primitive::AddBroadcast => "add_broadcast",
            Primitive::Mul => "mul",
            Primitive::MulBroadcast => "mul_broadcast",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::MaxPool => "maxpool",
            Primitive::GlobalPool => "global_pool",
            Primitive::Upsample => "upsample",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::Sum => "sum",
        }
    }
}

/// Outcome of one named case over several random shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub shapes: usize,
    pub max_rel_err: f64,
    /// Name of the tensor with the largest error.
    pub worst: String,
    pub tolerance: f64,
    /// Finite-difference probes taken, and how many straddled a kink.
    pub probes: usize,
    pub kinks: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub shapes: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Cap on probed elements per tensor for the block-level cases.
    pub block_max_elements: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            shapes: 20,
            seed: 0,
            tolerance: 1e-4,
            block_max_elements: None,
        }
    }
}

/// Built graph, random parameters and random inputs for one check.
struct Case {
    graph: Graph,
    params: ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    mode: Mode,
}

fn randomize(graph: &Graph, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut p = graph.init_params::<f64>(rng.gen());
    for (i, t) in p.params_mut().iter_mut().enumerate() {
        let name = &graph.param_name(crate::graph::ParamId(i));
        let fresh = Tensor::randn(t.shape(), 0.5, rng);
        *t = if name.ends_with(".gamma") { fresh.map(|v| v + 1.0) } else { fresh };
    }
    p
}

fn finish(mut graph: Graph, out: NodeId, inputs: Vec<Tensor<f64>>, mode: Mode, rng: &mut ChaCha8Rng) -> Case {
    graph.mark_output(out);
    let mut params = randomize(&graph, rng);
    if mode == Mode::Eval {
        // Non-trivial running statistics.
        let n = params.buffers().len();
        for i in 0..n {
            let name = params.buffer_names()[i].clone();
            let t = &params.buffers()[i];
            let fresh = if name.ends_with("running_var") {
                Tensor::uniform(t.shape(), 0.5, 2.0, rng)
            } else {
                Tensor::randn(t.shape(), 0.5, rng)
            };
            params.assign(&name, fresh).expect("buffer shape");
        }
    }
    Case {
        graph,
        params,
        inputs,
        mode,
    }
}

fn primitive_case(p: Primitive, rng: &mut ChaCha8Rng) -> Result<Case> {
    let n = rng.gen_range(if matches!(p, Primitive::BatchNormTrain) { 2..=3 } else { 1..=3 });
    let c = rng.gen_range(1..=4);
    let h = rng.gen_range(3..=8);
    let w = rng.gen_range(3..=8);
    let shape = Shape::new(n, c, h, w);
    let x = Tensor::<f64>::randn(shape, 1.0, rng);
    let mut g = Graph::new();
    let a = g.input(c);
    let mut inputs = alloc::vec![x];
    let mut mode = Mode::Train;
    let out = match p {
        Primitive::Conv => {
            let k = [1, 3, 7, 9][rng.gen_range(0..4)];
            let c_out = rng.gen_range(1..=4);
            g.conv("op", a, c_out, k, 1, rng.gen())?
        }
        Primitive::ConvStrided => {
            let k = [1, 3, 7][rng.gen_range(0..3)];
            g.conv("op", a, rng.gen_range(1..=4), k, 2, rng.gen())?
        }
        Primitive::Depthwise => {
            let k = [3, 5, 9][rng.gen_range(0..3)];
            g.depthwise("op", a, k, rng.gen_range(1..=2), rng.gen())?
        }
        Primitive::BatchNormTrain => g.batchnorm("op", a)?,
        Primitive::BatchNormEval => {
            mode = Mode::Eval;
            g.batchnorm("op", a)?
        }
        Primitive::Add | Primitive::Mul => {
            let b = g.input(c);
            inputs.push(Tensor::randn(shape, 1.0, rng));
            if p == Primitive::Add {
                g.add(a, b)?
            } else {
                g.mul(a, b)?
            }
        }
        Primitive::AddBroadcast | Primitive::MulBroadcast => {
            let b = g.input(c);
            inputs.push(Tensor::randn(shape, 1.0, rng));
            let pooled = g.global_avg_pool(b)?;
            if p == Primitive::AddBroadcast {
                g.add(a, pooled)?
            } else {
                g.mul(a, pooled)?
            }
        }
        Primitive::Relu => g.relu(a)?,
        Primitive::Sigmoid => g.sigmoid(a)?,
        Primitive::MaxPool => g.max_pool(a)?,
        Primitive::GlobalPool => g.global_avg_pool(a)?,
        Primitive::Upsample => g.upsample(a, rng.gen_range(2..=3))?,
        Primitive::Concat => {
            let c2 = rng.gen_range(1..=3);
            let b = g.input(c2);
            inputs.push(Tensor::randn(Shape::new(n, c2, h, w), 1.0, rng));
            g.concat(&[b, a, b])?
        }
        Primitive::Slice => {
            let start = rng.gen_range(0..c);
            let len = rng.gen_range(1..=c - start);
            g.slice(a, start, len)?
        }
        Primitive::Sum => g.sum(a)?,
    };
    Ok(finish(g, out, inputs, mode, rng))
}

fn run_cases(
    name: String,
    cfg: &SuiteConfig,
    max_elements: Option<usize>,
    mut make: impl FnMut(&mut ChaCha8Rng) -> Result<Case>,
    tag: u64,
) -> Result<CaseResult> {
    let mut worst = (0.0f64, String::new());
    let (mut probes, mut kinks) = (0, 0);
    for i in 0..cfg.shapes {
        let mut rng = stream(cfg.seed, &[0x7665_7269_6679, tag, i as u64]);
        let case = make(&mut rng)?;
        let gc = GradCheckConfig {
            tolerance: cfg.tolerance,
            max_elements,
            mode: case.mode,
            seed: rng.gen(),
            ..GradCheckConfig::default()
        };
        let report = grad_check(&case.graph, &case.params, &case.inputs, &gc)?;
        probes += report.entries.iter().map(|e| e.checked).sum::<usize>();
        kinks += report.entries.iter().map(|e| e.kinks).sum::<usize>();
        if let Some(e) = report.worst() {
            if e.max_rel_err >= worst.0 {
                worst = (e.max_rel_err, format!("{} (shape {})", e.name, case.inputs[0].shape()));
            }
        }
    }
    Ok(CaseResult {
        name,
        shapes: cfg.shapes,
        max_rel_err: worst.0,
        worst: worst.1,
        tolerance: cfg.tolerance,
        probes,
        kinks,
    })
}

pub fn check_primitive(p: Primitive, cfg: &SuiteConfig) -> Result<CaseResult> {
    let tag = Primitive::ALL.iter().position(|&q| q == p).unwrap_or(0) as u64;
    run_cases(p.name().into(), cfg, None, |rng| primitive_case(p, rng), tag)
}

/// One full block (with batchnorm) per random shape.
pub fn check_rsb(branches: usize, fusion: FusionMode, cfg: &SuiteConfig) -> Result<CaseResult> {
    let tag = 100 + 10 * branches as u64 + fusion as u64;
    run_cases(
        format!("rsb_b{branches}_{}", fusion.as_str()),
        cfg,
        cfg.block_max_elements,
        |rng| {
            let in_channels = branches * rng.gen_range(1..=2);
            let block = RsbConfig {
                in_channels,
                out_channels: if rng.gen_bool(0.5) { in_channels } else { rng.gen_range(1..=6) },
                branches,
                branch_width: rng.gen_range(1..=3),
                stride: if rng.gen_bool(0.25) { 2 } else { 1 },
                fusion,
                batchnorm: true,
            };
            let shape = Shape::new(2, in_channels, rng.gen_range(3..=6), rng.gen_range(3..=6));
            let mut g = Graph::new();
            let x = g.input(in_channels);
            let out = rsb_into(&mut g, "rsb", &block, x)?.out;
            let input = Tensor::randn(shape, 1.0, rng);
            Ok(finish(g, out, alloc::vec![input], Mode::Train, rng))
        },
        tag,
    )
}

pub fn check_prm(cfg: &SuiteConfig) -> Result<CaseResult> {
    run_cases(
        "prm".into(),
        cfg,
        cfg.block_max_elements,
        |rng| {
            let c = rng.gen_range(1..=4);
            let shape = Shape::new(2, c, rng.gen_range(3..=8), rng.gen_range(3..=8));
            let mut g = Graph::new();
            let x = g.input(c);
            let out = prm_into(&mut g, "prm", x, true)?.out;
            let input = Tensor::randn(shape, 1.0, rng);
            Ok(finish(g, out, alloc::vec![input], Mode::Train, rng))
        },
        999,
    )
}

/// Every primitive, every block variant with 2..=6 branches, and the refine machine.
pub fn run_suite(cfg: &SuiteConfig, mut on_case: impl FnMut(&CaseResult)) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let mut push = |r: CaseResult| {
        on_case(&r);
        out.push(r);
    };
    for p in Primitive::ALL {
        push(check_primitive(p, cfg)?);
    }
    for fusion in [FusionMode::Rsn, FusionMode::Baseline1, FusionMode::Baseline2] {
        for b in 2..=6 {
            push(check_rsb(b, fusion, cfg)?);
        }
    }
    push(check_prm(cfg)?);
    Ok(out)
}
