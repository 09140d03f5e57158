use alloc::format;
use alloc::vec::Vec;

use super::prm::{prm_into, PrmNodes};
use super::rsb::{conv_unit, rsb_into};
use super::NetworkConfig;
use crate::graph::{Graph, NodeId};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct StageNodes {
    /// Image (stage 0) or previous stage's features.
    pub input: NodeId,
    /// Output of the last block of each level, at 1/4 .. 1/32 resolution.
    pub levels: [NodeId; 4],
    /// 1/4-resolution head features handed to the next stage.
    pub features: NodeId,
    pub prm: Option<PrmNodes>,
    pub heatmap: NodeId,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub graph: Graph,
    pub input: NodeId,
    pub stages: Vec<StageNodes>,
}

impl Network {
    /// Heatmap node of every stage, first to last.
    pub fn heatmaps(&self) -> Vec<NodeId> {
        self.stages.iter().map(|s| s.heatmap).collect()
    }
}

fn stage_into(g: &mut Graph, cfg: &NetworkConfig, t: usize, x: NodeId, last: bool) -> Result<StageNodes> {
    let bn = cfg.batchnorm;
    let p = format!("s{t}");
    let mut cur = if t == 0 {
        let s = conv_unit(g, &format!("{p}.stem"), x, cfg.stem_channels, 7, 2, bn, true)?;
        g.max_pool(s)?
    } else {
        conv_unit(g, &format!("{p}.adapt"), x, cfg.stem_channels, 3, 1, bn, true)?
    };

    let mut levels = [cur; 4];
    for (l, level) in levels.iter_mut().enumerate() {
        for b in 0..cfg.blocks[l] {
            cur = rsb_into(g, &format!("{p}.l{l}.b{b}"), &cfg.block(l, b), cur)?.out;
        }
        *level = cur;
    }

    let hc = cfg.head_channels;
    let mut top = conv_unit(g, &format!("{p}.lateral3"), levels[3], hc, 1, 1, bn, false)?;
    for l in (0..3).rev() {
        let up = g.upsample(top, 2)?;
        let lat = conv_unit(g, &format!("{p}.lateral{l}"), levels[l], hc, 1, 1, bn, false)?;
        top = g.add(up, lat)?;
    }
    let features = conv_unit(g, &format!("{p}.head"), top, hc, 3, 1, bn, true)?;
    let prm = if last && cfg.prm {
        Some(prm_into(g, &format!("{p}.prm"), features, bn)?)
    } else {
        None
    };
    let pre = prm.map_or(features, |n| n.out);
    let heatmap = g.conv(&format!("{p}.out"), pre, cfg.keypoints, 1, 1, true)?;
    Ok(StageNodes {
        input: x,
        levels,
        features,
        prm,
        heatmap,
    })
}

/// The full cascade; every stage's heatmap is a marked output.
pub fn build_network(cfg: &NetworkConfig) -> Result<Network> {
    cfg.validate()?;
    let mut g = Graph::new();
    let input = g.input(3);
    let mut stages = Vec::with_capacity(cfg.stages);
    let mut x = input;
    for t in 0..cfg.stages {
        let s = stage_into(&mut g, cfg, t, x, t + 1 == cfg.stages)?;
        g.mark_output(s.heatmap);
        x = s.features;
        stages.push(s);
    }
    Ok(Network {
        config: cfg.clone(),
        graph: g,
        input,
        stages,
    })
}

/// A single stage as its own graph. Stage 0 reads an image; later stages read
/// `head_channels` features at 1/4 resolution. PRM is included iff `t` is the last stage.
pub fn build_stage(cfg: &NetworkConfig, t: usize) -> Result<Network> {
    cfg.validate()?;
    if t >= cfg.stages {
        return Err(crate::Error::Config(format!("stage {t} out of range for {} stages", cfg.stages)));
    }
    let mut g = Graph::new();
    let input = g.input(if t == 0 { 3 } else { cfg.head_channels });
    let s = stage_into(&mut g, cfg, t, input, t + 1 == cfg.stages)?;
    g.mark_output(s.heatmap);
    Ok(Network {
        config: cfg.clone(),
        graph: g,
        input,
        stages: alloc::vec![s],
    })
}
