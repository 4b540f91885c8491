use super::graph::{Block, CoreGraph, Dest, Mode, Source, Stage, StageKind, Step, FUSION_EPS};
use super::{CoreKind, CoreSpec};
use crate::blocks::{BottleneckBlock, BottomUpOp, FusionNode, TopDownOp};
use crate::error::Result;
use crate::params::Registry;

struct Builder<'a> {
    reg: &'a mut Registry,
    spec: CoreSpec,
    prefix: String,
    blocks: Vec<Block>,
    stages: Vec<Stage>,
}

impl<'a> Builder<'a> {
    fn new(reg: &'a mut Registry, prefix: &str, spec: CoreSpec) -> Self {
        Builder {
            reg,
            spec,
            prefix: prefix.to_string(),
            blocks: Vec::new(),
            stages: Vec::new(),
        }
    }

    fn push_block(&mut self, block: Block) -> usize {
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    fn stage(&mut self, kind: StageKind, layer: usize, mode: Mode, steps: Vec<Step>) {
        self.stages.push(Stage {
            kind,
            layer,
            mode,
            steps,
        });
    }

    fn top_down(&mut self, layer: usize, tag: &str) -> Result<()> {
        let mut steps = Vec::new();
        for l in (self.spec.min_level()..self.spec.max_level()).rev() {
            let name = format!("{}.layer{layer}.{tag}.p{l}", self.prefix);
            let op = TopDownOp::register(self.reg, &name, self.spec.feature_size, self.spec.norm_groups)?;
            let block = self.push_block(Block::TopDown(op));
            steps.push(Step {
                block,
                target: l,
                sources: vec![Source::Level(l + 1)],
                dest: Dest::Level,
            });
        }
        self.stage(StageKind::TopDown, layer, Mode::Sequential, steps);
        Ok(())
    }

    fn bottom_up(&mut self, layer: usize, tag: &str) -> Result<()> {
        let mut steps = Vec::new();
        for l in self.spec.min_level() + 1..=self.spec.max_level() {
            let name = format!("{}.layer{layer}.{tag}.p{l}", self.prefix);
            let op = BottomUpOp::register(
                self.reg,
                &name,
                self.spec.feature_size,
                self.spec.hidden_size,
                self.spec.norm_groups,
            )?;
            let block = self.push_block(Block::BottomUp(op));
            steps.push(Step {
                block,
                target: l,
                sources: vec![Source::Level(l - 1)],
                dest: Dest::Level,
            });
        }
        self.stage(StageKind::BottomUp, layer, Mode::Sequential, steps);
        Ok(())
    }

    fn self_processing(&mut self, layer: usize, tag: &str) -> Result<()> {
        let mut steps = Vec::new();
        for l in self.spec.min_level()..=self.spec.max_level() {
            for j in 0..self.spec.bottlenecks {
                let name = format!("{}.layer{layer}.{tag}.p{l}.b{j}", self.prefix);
                let b = BottleneckBlock::register(
                    self.reg,
                    &name,
                    self.spec.feature_size,
                    self.spec.hidden_size,
                    self.spec.norm_groups,
                )?;
                let block = self.push_block(Block::Bottleneck(b));
                steps.push(Step {
                    block,
                    target: l,
                    sources: Vec::new(),
                    dest: Dest::Level,
                });
            }
        }
        self.stage(StageKind::SelfProcessing, layer, Mode::Parallel, steps);
        Ok(())
    }

    fn fusion(&mut self, name: String, arity: usize) -> Result<usize> {
        let node = FusionNode::register(
            self.reg,
            &name,
            arity,
            self.spec.feature_size,
            self.spec.hidden_size,
            self.spec.norm_groups,
            FUSION_EPS,
        )?;
        Ok(self.push_block(Block::Fusion(node)))
    }

    /// Top-down nodes fuse the layer input with the resized coarser top-down
    /// map; bottom-up nodes fuse layer input, top-down map and the resized
    /// finer output. The coarsest level skips the top-down node and the
    /// finest output is its top-down node.
    fn bifpn(&mut self, layer: usize) -> Result<()> {
        let (lo, hi) = (self.spec.min_level(), self.spec.max_level());
        let mut steps = Vec::new();
        for l in (lo..hi).rev() {
            let coarser = if l + 1 == hi {
                Source::LayerInput(hi)
            } else {
                Source::TopDown(l + 1)
            };
            let block = self.fusion(format!("{}.layer{layer}.td.p{l}", self.prefix), 2)?;
            steps.push(Step {
                block,
                target: l,
                sources: vec![Source::LayerInput(l), coarser],
                dest: if l == lo { Dest::Level } else { Dest::TopDown },
            });
        }
        for l in lo + 1..=hi {
            let sources = if l == hi {
                vec![Source::LayerInput(l), Source::Level(l - 1)]
            } else {
                vec![Source::LayerInput(l), Source::TopDown(l), Source::Level(l - 1)]
            };
            let block = self.fusion(format!("{}.layer{layer}.bu.p{l}", self.prefix), sources.len())?;
            steps.push(Step {
                block,
                target: l,
                sources,
                dest: Dest::Level,
            });
        }
        self.stage(StageKind::BiFpn, layer, Mode::Sequential, steps);
        Ok(())
    }

    fn finish(self) -> CoreGraph {
        CoreGraph {
            spec: self.spec,
            blocks: self.blocks,
            stages: self.stages,
        }
    }
}

/// Validates `spec`, registers its parameters under `prefix` and compiles
/// the schedule.
pub fn build_core(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    spec.validate()?;
    let mut b = Builder::new(reg, prefix, spec.clone());
    match spec.kind {
        CoreKind::Tpn => {
            for i in 0..spec.layers {
                b.top_down(i, "td")?;
                b.self_processing(i, "sp1")?;
                b.bottom_up(i, "bu")?;
                b.self_processing(i, "sp2")?;
            }
        }
        CoreKind::Fpn => b.top_down(0, "td")?,
        CoreKind::Panet => {
            for i in 0..spec.layers {
                b.top_down(i, "td")?;
                b.bottom_up(i, "bu")?;
            }
        }
        CoreKind::Bifpn => {
            for i in 0..spec.layers {
                b.bifpn(i)?;
            }
        }
        CoreKind::Bfpn => {
            b.self_processing(0, "sp")?;
            b.top_down(0, "td")?;
        }
        CoreKind::Hfpn => {
            b.top_down(0, "td")?;
            b.self_processing(0, "sp")?;
        }
    }
    Ok(b.finish())
}

fn with_kind(spec: &CoreSpec, kind: CoreKind) -> CoreSpec {
    CoreSpec { kind, ..spec.clone() }
}

/// TPN with `spec`'s `L`, `B`, levels and sizes.
pub fn build_tpn(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    build_core(reg, prefix, &with_kind(spec, CoreKind::Tpn))
}

pub fn build_fpn(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    build_core(reg, prefix, &with_kind(spec, CoreKind::Fpn))
}

pub fn build_panet(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    build_core(reg, prefix, &with_kind(spec, CoreKind::Panet))
}

pub fn build_bifpn(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    build_core(reg, prefix, &with_kind(spec, CoreKind::Bifpn))
}

pub fn build_bfpn(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    build_core(reg, prefix, &with_kind(spec, CoreKind::Bfpn))
}

pub fn build_hfpn(reg: &mut Registry, prefix: &str, spec: &CoreSpec) -> Result<CoreGraph> {
    build_core(reg, prefix, &with_kind(spec, CoreKind::Hfpn))
}
