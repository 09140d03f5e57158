//! Residual steps blocks, the pose refine machine and the multi-stage network.

use alloc::format;
use alloc::string::{String, ToString};

use crate::{Error, Result};

mod network;
mod prm;
mod rsb;

pub use network::{build_network, build_stage, Network, StageNodes};
pub use prm::{prm_combine, prm_into, PrmNodes};
pub use rsb::{rsb_into, RsbNodes};

/// Width multiplier that puts the `rsn18` preset at 12.5M parameters
/// (see `analysis::calibrate_width`).
pub const CALIBRATED_WIDTH_MULT: f64 = 1.34;

pub const COCO_KEYPOINTS: usize = 17;
pub const MPII_KEYPOINTS: usize = 16;

/// How the branches of a block exchange features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Unit `j` of branch `i` also receives unit `j` of branch `i - 1`.
    Rsn,
    /// Independent branches.
    Baseline1,
    /// Independent branches, all fed from the third split.
    Baseline2,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Rsn => "rsn",
            FusionMode::Baseline1 => "baseline1",
            FusionMode::Baseline2 => "baseline2",
        }
    }
}

impl core::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rsn" => Ok(FusionMode::Rsn),
            "baseline1" => Ok(FusionMode::Baseline1),
            "baseline2" => Ok(FusionMode::Baseline2),
            _ => Err(Error::Config(format!("unknown fusion mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsbConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub branches: usize,
    pub branch_width: usize,
    pub stride: usize,
    pub fusion: FusionMode,
    pub batchnorm: bool,
}

impl RsbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.branches) {
            return Err(Error::Config(format!("branches must be in 1..=6, got {}", self.branches)));
        }
        if self.branch_width == 0 || self.out_channels == 0 {
            return Err(Error::Config("block widths must be positive".into()));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!("block stride must be 1 or 2, got {}", self.stride)));
        }
        if self.in_channels % self.branches != 0 {
            return Err(Error::Indivisible {
                what: "block input",
                channels: self.in_channels,
                parts: self.branches,
            });
        }
        Ok(())
    }

    /// Whether the shortcut needs a 1x1 projection.
    pub fn projects(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }

    /// Source split feeding branch `i` (0-based).
    pub fn source_split(&self, i: usize) -> usize {
        match self.fusion {
            FusionMode::Baseline2 => self.branches.min(3) - 1,
            _ => i,
        }
    }

    /// Whether unit `j` of branch `i` (both 0-based) receives a cross-branch term.
    pub fn has_cross(&self, i: usize, j: usize) -> bool {
        self.fusion == FusionMode::Rsn && i > 0 && j < i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub name: String,
    pub stages: usize,
    pub blocks: [usize; 4],
    pub channels: [usize; 4],
    pub stem_channels: usize,
    /// Block output width is `channels[l] * expansion`.
    pub expansion: usize,
    /// Width of the top-down head and of the features passed between stages.
    pub head_channels: usize,
    pub keypoints: usize,
    /// Input `(height, width)`.
    pub input: (usize, usize),
    pub branches: usize,
    pub fusion: FusionMode,
    pub width_mult: f64,
    /// Pose refine machine in the last stage.
    pub prm: bool,
    pub batchnorm: bool,
}

impl NetworkConfig {
    fn base(name: &str) -> Self {
        NetworkConfig {
            name: name.to_string(),
            stages: 1,
            blocks: [2, 2, 2, 2],
            channels: [64, 128, 256, 512],
            stem_channels: 64,
            expansion: 3,
            head_channels: 128,
            keypoints: COCO_KEYPOINTS,
            input: (256, 192),
            branches: 4,
            fusion: FusionMode::Rsn,
            width_mult: CALIBRATED_WIDTH_MULT,
            prm: false,
            batchnorm: true,
        }
    }

    pub fn rsn18() -> Self {
        Self::base("rsn18")
    }

    pub fn rsn50() -> Self {
        NetworkConfig {
            blocks: [3, 4, 6, 3],
            expansion: 4,
            head_channels: 256,
            ..Self::base("rsn50")
        }
    }

    pub fn rsn50x2() -> Self {
        NetworkConfig {
            name: "rsn50x2".into(),
            stages: 2,
            prm: true,
            ..Self::rsn50()
        }
    }

    pub fn rsn50x4() -> Self {
        NetworkConfig {
            name: "rsn50x4".into(),
            stages: 4,
            prm: true,
            ..Self::rsn50()
        }
    }

    /// Desk-scale two-stage network used for training runs on a CPU.
    pub fn rsn_tiny() -> Self {
        NetworkConfig {
            name: "rsn-tiny".into(),
            stages: 2,
            blocks: [1, 1, 1, 1],
            channels: [16, 32, 64, 128],
            stem_channels: 16,
            expansion: 2,
            head_channels: 32,
            input: (96, 64),
            width_mult: 1.0,
            prm: true,
            ..Self::base("rsn-tiny")
        }
    }

    pub const PRESETS: [&'static str; 5] = ["rsn18", "rsn50", "rsn50x2", "rsn50x4", "rsn-tiny"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "rsn18" => Ok(Self::rsn18()),
            "rsn50" => Ok(Self::rsn50()),
            "rsn50x2" => Ok(Self::rsn50x2()),
            "rsn50x4" => Ok(Self::rsn50x4()),
            "rsn-tiny" => Ok(Self::rsn_tiny()),
            _ => Err(Error::Config(format!("unknown preset `{name}`"))),
        }
    }

    /// Per-branch width at level `l`: `round(width_mult * channels[l] / 4)`, at least 1.
    pub fn branch_width(&self, level: usize) -> usize {
        let w = libm::round(self.width_mult * self.channels[level] as f64 / 4.0);
        (w as usize).max(1)
    }

    pub fn level_out(&self, level: usize) -> usize {
        self.channels[level] * self.expansion
    }

    /// Heatmap `(height, width)`.
    pub fn heatmap_size(&self) -> (usize, usize) {
        (self.input.0 / 4, self.input.1 / 4)
    }

    /// Configuration of block `b` of level `l`.
    pub fn block(&self, level: usize, b: usize) -> RsbConfig {
        RsbConfig {
            in_channels: if b > 0 {
                self.level_out(level)
            } else if level == 0 {
                self.stem_channels
            } else {
                self.level_out(level - 1)
            },
            out_channels: self.level_out(level),
            branches: self.branches,
            branch_width: self.branch_width(level),
            stride: if b == 0 && level > 0 { 2 } else { 1 },
            fusion: self.fusion,
            batchnorm: self.batchnorm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages == 0 {
            return bad("stages must be at least 1".into());
        }
        if self.blocks.iter().any(|&b| b == 0) {
            return bad(format!("every level needs at least one block, got {:?}", self.blocks));
        }
        if self.channels.iter().any(|&c| c == 0)
            || self.stem_channels == 0
            || self.expansion == 0
            || self.head_channels == 0
            || self.keypoints == 0
        {
            return bad("channel counts must be positive".into());
        }
        let (h, w) = self.input;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return bad(format!("input {h}x{w} must be a positive multiple of 32 in both axes"));
        }
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return bad(format!("width multiplier must be positive, got {}", self.width_mult));
        }
        for l in 0..4 {
            for b in 0..self.blocks[l] {
                self.block(l, b).validate()?;
            }
        }
        Ok(())
    }
}
