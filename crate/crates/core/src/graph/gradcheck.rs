use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Graph, Mode, ParamStore};
use crate::rng::{normal, stream};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    pub tolerance: f64,
    /// Elements probed per tensor; `None` probes all of them.
    pub max_elements: Option<usize>,
    /// Also compare gradients with respect to graph inputs.
    pub check_inputs: bool,
    pub mode: Mode,
    /// Seed for the random output projection.
    pub seed: u64,
    /// Error denominators are at least `floor * G`, `G` being the largest gradient
    /// magnitude anywhere in the check. Keeps structurally zero gradients (scale
    /// invariance under batchnorm) from turning rounding noise into relative error.
    pub floor: f64,
    /// Relative disagreement of one-sided slopes that marks a probe as straddling a kink.
    pub kink_tolerance: f64,
    /// Step multiplier for the repeat probe at a kink.
    pub kink_shrink: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            max_elements: None,
            check_inputs: true,
            mode: Mode::Train,
            seed: 0,
            floor: 1e-3,
            kink_tolerance: 1e-2,
            kink_shrink: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|, floor * G)` over probed elements.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Probes re-measured with a smaller step because they straddled a kink.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn probe_indices(numel: usize, max: Option<usize>, salt: u64) -> Vec<usize> {
    match max {
        Some(m) if m < numel => {
            let offset = (salt as usize) % (numel / m).max(1);
            (0..m).map(|i| i * numel / m + offset).filter(|&i| i < numel).collect()
        }
        _ => (0..numel).collect(),
    }
}

fn abs_max(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = abs_max(analytic).max(abs_max(numeric)).max(floor);
    if scale < 1e-12 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

struct Probe {
    name: String,
    analytic: Vec<f64>,
    numeric: Vec<f64>,
    kinks: usize,
}

impl Probe {
    fn new(name: String, cap: usize) -> Self {
        Probe {
            name,
            analytic: Vec::with_capacity(cap),
            numeric: Vec::with_capacity(cap),
            kinks: 0,
        }
    }

    fn push(&mut self, a: f64, n: f64, kink: bool) {
        self.analytic.push(a);
        self.numeric.push(n);
        self.kinks += kink as usize;
    }
}

/// Central difference of `f` around zero offset. When the one-sided slopes disagree
/// the step straddles a kink (relu, max) and is repeated at `eps * kink_shrink`.
fn difference(cfg: &GradCheckConfig, centre: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<(f64, bool)> {
    let mut eps = cfg.eps;
    for attempt in 0..2 {
        let up = f(eps)?;
        let down = f(-eps)?;
        let (fwd, bwd) = ((up - centre) / eps, (centre - down) / eps);
        let kink = (fwd - bwd).abs() > cfg.kink_tolerance * fwd.abs().max(bwd.abs()).max(1.0);
        if !kink || attempt == 1 {
            return Ok(((up - down) / (2.0 * eps), attempt == 1));
        }
        eps *= cfg.kink_shrink;
    }
    unreachable!()
}

/// Compare analytic gradients of `sum_o <output_o, R_o>` (random `R`) with central differences.
pub fn grad_check(
    graph: &Graph,
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if graph.outputs().is_empty() {
        return Err(Error::Graph("grad_check needs at least one marked output".into()));
    }
    let base = graph.forward(params, inputs, cfg.mode)?;
    let projections: Vec<_> = graph
        .outputs()
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            let shape = base.value(o).shape();
            let mut rng = stream(cfg.seed, &[0x6763, k as u64]);
            let data = (0..shape.numel()).map(|_| normal(&mut rng)).collect();
            (o, Tensor::new(shape, data).expect("projection shape"))
        })
        .collect();

    let loss = |p: &ParamStore<f64>, x: &[Tensor<f64>]| -> Result<f64> {
        let tape = graph.forward(p, x, cfg.mode)?;
        Ok(projections
            .iter()
            .map(|(o, r)| {
                tape.value(*o)
                    .data()
                    .iter()
                    .zip(r.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum())
    };

    let mut work = params.clone();
    let input_grads = graph.backward_seeded(&mut work, &base, &projections)?;
    let analytic: Vec<Vec<f64>> = work
        .params()
        .iter()
        .map(|t| t.grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    for t in work.params_mut() {
        t.clear_grad();
    }

    let centre = loss(params, inputs)?;
    let mut raw: Vec<Probe> = Vec::new();
    for (pi, name) in params.param_names().iter().enumerate() {
        let idx = probe_indices(params.params()[pi].numel(), cfg.max_elements, pi as u64);
        let mut probe = Probe::new(name.clone(), idx.len());
        for &i in &idx {
            let orig = work.params()[pi].data()[i];
            let (n, kink) = difference(cfg, centre, |v| {
                work.params_mut()[pi].data_mut()[i] = orig + v;
                loss(&work, inputs)
            })?;
            work.params_mut()[pi].data_mut()[i] = orig;
            probe.push(analytic[pi][i], n, kink);
        }
        raw.push(probe);
    }

    if cfg.check_inputs {
        let mut xs: Vec<Tensor<f64>> = inputs.to_vec();
        for k in 0..xs.len() {
            let idx = probe_indices(xs[k].numel(), cfg.max_elements, 1000 + k as u64);
            let mut probe = Probe::new(format!("input{k}"), idx.len());
            for &i in &idx {
                let orig = xs[k].data()[i];
                let (n, kink) = difference(cfg, centre, |v| {
                    xs[k].data_mut()[i] = orig + v;
                    loss(params, &xs)
                })?;
                xs[k].data_mut()[i] = orig;
                probe.push(input_grads[k].data()[i], n, kink);
            }
            raw.push(probe);
        }
    }

    let global = raw.iter().fold(0.0f64, |m, p| m.max(abs_max(&p.analytic)).max(abs_max(&p.numeric)));
    let entries = raw
        .into_iter()
        .map(|p| GradCheckEntry {
            max_rel_err: rel_err(&p.analytic, &p.numeric, cfg.floor * global),
            checked: p.analytic.len(),
            kinks: p.kinks,
            name: p.name,
        })
        .collect();
    Ok(GradCheckReport {
        entries,
        tolerance: cfg.tolerance,
    })
}
