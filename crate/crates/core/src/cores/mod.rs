//! Core architectures: pyramid-to-pyramid maps assembled from the blocks
//! in [`crate::blocks`].
//!
//! A [`CoreSpec`] names the architecture; [`build_core`] registers its
//! parameters and compiles it into a [`CoreGraph`], an ordered list of
//! stages whose steps apply one block to one pyramid level.

mod build;
mod graph;

pub use build::{build_bfpn, build_bifpn, build_core, build_fpn, build_hfpn, build_panet, build_tpn};
pub use graph::{Block, CoreGraph, Dest, FusionNode, Mode, ScheduleRow, Source, Stage, StageKind, Step, FUSION_EPS};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreKind {
    #[serde(rename = "tpn", alias = "TPN")]
    Tpn,
    #[serde(rename = "fpn", alias = "FPN")]
    Fpn,
    #[serde(rename = "panet", alias = "PANet")]
    Panet,
    #[serde(rename = "bifpn", alias = "BiFPN")]
    Bifpn,
    #[serde(rename = "bfpn", alias = "bFPN")]
    Bfpn,
    #[serde(rename = "hfpn", alias = "hFPN")]
    Hfpn,
}

impl CoreKind {
    pub const ALL: [CoreKind; 6] = [
        CoreKind::Tpn,
        CoreKind::Fpn,
        CoreKind::Panet,
        CoreKind::Bifpn,
        CoreKind::Bfpn,
        CoreKind::Hfpn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoreKind::Tpn => "TPN",
            CoreKind::Fpn => "FPN",
            CoreKind::Panet => "PANet",
            CoreKind::Bifpn => "BiFPN",
            CoreKind::Bfpn => "bFPN",
            CoreKind::Hfpn => "hFPN",
        }
    }

    /// Whether the kind has self-processing stacks sized by `B`.
    pub fn uses_bottlenecks(self) -> bool {
        matches!(self, CoreKind::Tpn | CoreKind::Bfpn | CoreKind::Hfpn)
    }

    /// Whether the kind stacks `L` layers.
    pub fn uses_layers(self) -> bool {
        matches!(self, CoreKind::Tpn | CoreKind::Panet | CoreKind::Bifpn)
    }
}

impl fmt::Display for CoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoreKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown core kind `{s}`")))
    }
}

fn one() -> usize {
    1
}

fn default_levels() -> [usize; 2] {
    [3, 7]
}

fn default_feature() -> usize {
    256
}

fn default_hidden() -> usize {
    64
}

fn default_groups() -> usize {
    8
}

/// Declarative core description, the `"core"` entry of a model file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSpec {
    pub kind: CoreKind,
    /// Number of stacked core layers.
    #[serde(rename = "L", default = "one")]
    pub layers: usize,
    /// Bottleneck layers per self-processing operation.
    #[serde(rename = "B", default = "one")]
    pub bottlenecks: usize,
    /// Inclusive pyramid level range.
    #[serde(default = "default_levels")]
    pub levels: [usize; 2],
    #[serde(default = "default_feature")]
    pub feature_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_groups")]
    pub norm_groups: usize,
}

impl CoreSpec {
    pub fn new(kind: CoreKind, layers: usize, bottlenecks: usize) -> Self {
        CoreSpec {
            kind,
            layers,
            bottlenecks,
            levels: default_levels(),
            feature_size: default_feature(),
            hidden_size: default_hidden(),
            norm_groups: default_groups(),
        }
    }

    pub fn tpn(layers: usize, bottlenecks: usize) -> Self {
        Self::new(CoreKind::Tpn, layers, bottlenecks)
    }

    pub fn with_sizes(mut self, feature_size: usize, hidden_size: usize, groups: usize) -> Self {
        self.feature_size = feature_size;
        self.hidden_size = hidden_size;
        self.norm_groups = groups;
        self
    }

    pub fn with_levels(mut self, min: usize, max: usize) -> Self {
        self.levels = [min, max];
        self
    }

    pub fn min_level(&self) -> usize {
        self.levels[0]
    }

    pub fn max_level(&self) -> usize {
        self.levels[1]
    }

    pub fn num_levels(&self) -> usize {
        self.levels[1] + 1 - self.levels[0]
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.levels;
        if hi <= lo {
            return Err(Error::config(format!(
                "level range {lo}..={hi} must span at least 2 levels"
            )));
        }
        if self.layers == 0 {
            return Err(Error::config("L must be at least 1"));
        }
        if self.bottlenecks == 0 {
            return Err(Error::config("B must be at least 1"));
        }
        if !self.kind.uses_layers() && self.layers != 1 {
            return Err(Error::config(format!(
                "{} is a single-layer core; L must be 1",
                self.kind
            )));
        }
        if !self.kind.uses_bottlenecks() && self.bottlenecks != 1 {
            return Err(Error::config(format!(
                "{} has no self-processing; B must be 1",
                self.kind
            )));
        }
        let g = self.norm_groups;
        if g == 0 || !self.feature_size.is_multiple_of(g) || !self.hidden_size.is_multiple_of(g) {
            return Err(Error::config(format!(
                "feature size {} and hidden size {} must be divisible by {g} norm groups",
                self.feature_size, self.hidden_size
            )));
        }
        Ok(())
    }

    /// Short label such as `TPN(L=2,B=3)`.
    pub fn label(&self) -> String {
        match (self.kind.uses_layers(), self.kind.uses_bottlenecks()) {
            (true, true) => format!("{}(L={},B={})", self.kind, self.layers, self.bottlenecks),
            (true, false) => format!("{}(L={})", self.kind, self.layers),
            (false, true) => format!("{}(B={})", self.kind, self.bottlenecks),
            (false, false) => self.kind.to_string(),
        }
    }
}
