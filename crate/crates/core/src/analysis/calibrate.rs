use alloc::collections::BTreeMap;

use super::{count_cost, symbolic_network, CostReport};
use crate::arch::{FusionMode, NetworkConfig};
use crate::{Error, Result};

/// Grid of width multipliers scanned by the calibration routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthSearch {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for WidthSearch {
    fn default() -> Self {
        WidthSearch {
            lo: 0.1,
            hi: 8.0,
            step: 0.001,
        }
    }
}

fn cost_of(cfg: &NetworkConfig) -> Result<CostReport> {
    count_cost(&symbolic_network(cfg)?, cfg.input)
}

/// Smallest grid multiplier minimising `objective(cost)`. Costs are cached by branch widths,
/// which is all the multiplier influences.
fn scan(base: &NetworkConfig, search: WidthSearch, objective: impl Fn(&CostReport) -> f64) -> Result<(f64, CostReport)> {
    if !(search.step > 0.0 && search.lo > 0.0 && search.hi >= search.lo) {
        return Err(Error::Config("invalid width search range".into()));
    }
    let inv = libm::round(1.0 / search.step);
    let (k0, k1) = (libm::ceil(search.lo * inv) as u64, libm::floor(search.hi * inv) as u64);
    let mut cache: BTreeMap<[usize; 4], (f64, CostReport)> = BTreeMap::new();
    let mut best: Option<(f64, f64, [usize; 4])> = None;
    for k in k0..=k1 {
        let m = k as f64 / inv;
        let cfg = NetworkConfig {
            width_mult: m,
            ..base.clone()
        };
        let widths = [0, 1, 2, 3].map(|l| cfg.branch_width(l));
        if !cache.contains_key(&widths) {
            let c = cost_of(&cfg)?;
            cache.insert(widths, (objective(&c), c));
        }
        let score = cache[&widths].0;
        if best.map_or(true, |(s, _, _)| score < s) {
            best = Some((score, m, widths));
        }
    }
    let (_, m, w) = best.ok_or_else(|| Error::Config("empty width search range".into()))?;
    Ok((m, cache.remove(&w).expect("cached").1))
}

/// Multiplier whose parameter count is closest to `target_params`.
pub fn calibrate_width(base: &NetworkConfig, target_params: u64, search: WidthSearch) -> Result<(f64, CostReport)> {
    scan(base, search, |c| (c.params as f64 - target_params as f64).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub config: NetworkConfig,
    pub reference: CostReport,
    pub variant: CostReport,
}

impl AblationResult {
    /// `(variant - reference) / reference` in MACs.
    pub fn flops_rel_diff(&self) -> f64 {
        (self.variant.macs as f64 - self.reference.macs as f64) / self.reference.macs as f64
    }
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// A `branches`/`fusion` variant of `base` with channels rounded up to multiples of
/// `branches` and its width multiplier re-fitted to `base`'s MACs.
pub fn ablation_variant(base: &NetworkConfig, branches: usize, fusion: FusionMode, search: WidthSearch) -> Result<AblationResult> {
    let reference = cost_of(base)?;
    let adapted = NetworkConfig {
        name: alloc::format!("{}-{}-b{branches}", base.name, fusion.as_str()),
        branches,
        fusion,
        stem_channels: round_up(base.stem_channels, branches),
        channels: base.channels.map(|c| round_up(c, branches)),
        ..base.clone()
    };
    let target = reference.macs as f64;
    let (m, variant) = scan(&adapted, search, |c| (c.macs as f64 - target).abs())?;
    Ok(AblationResult {
        config: NetworkConfig {
            width_mult: m,
            ..adapted
        },
        reference,
        variant,
    })
}
