use super::CoreSpec;
use crate::analysis::flops::ConvRecord;
use crate::blocks::{BottleneckBlock, BottomUpOp, TopDownOp};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore, Registry};
use crate::pyramid::{check_levels, FeaturePyramid, Pyramid};
use crate::tensor::{Scalar, Shape, Tape, Var};
use serde::Serialize;

pub use crate::blocks::FusionNode;

/// Fusion-weight normalization epsilon of the BiFPN baseline.
pub const FUSION_EPS: f64 = 1e-4;

/// Read semantics of a communication stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Each step reads neighbor maps already updated earlier in the stage.
    Sequential,
    /// Each step reads the stage's input snapshot.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    TopDown,
    BottomUp,
    SelfProcessing,
    BiFpn,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::TopDown => "top_down",
            StageKind::BottomUp => "bottom_up",
            StageKind::SelfProcessing => "self_processing",
            StageKind::BiFpn => "bifpn",
        }
    }

    fn is_communication(self) -> bool {
        matches!(self, StageKind::TopDown | StageKind::BottomUp)
    }
}

/// Where a step reads one of its inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// The current map at a level (or the stage snapshot in parallel mode).
    Level(usize),
    /// The map at a level as it entered the current core layer.
    LayerInput(usize),
    /// An intermediate top-down map of the current layer.
    TopDown(usize),
}

impl Source {
    fn label(self) -> String {
        match self {
            Source::Level(l) => format!("P{l}"),
            Source::LayerInput(l) => format!("P{l}.in"),
            Source::TopDown(l) => format!("P{l}.td"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    Level,
    TopDown,
}

/// One block application. The target level's current map is the implicit
/// primary input of residual blocks.
#[derive(Clone, Debug)]
pub struct Step {
    pub block: usize,
    pub target: usize,
    pub sources: Vec<Source>,
    pub dest: Dest,
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub kind: StageKind,
    pub layer: usize,
    pub mode: Mode,
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug)]
pub enum Block {
    TopDown(TopDownOp),
    BottomUp(BottomUpOp),
    Bottleneck(BottleneckBlock),
    Fusion(FusionNode),
}

impl Block {
    pub fn name(&self) -> &'static str {
        match self {
            Block::TopDown(_) => "top_down",
            Block::BottomUp(_) => "bottom_up",
            Block::Bottleneck(_) => "bottleneck",
            Block::Fusion(_) => "fusion",
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Block::TopDown(b) => b.params(),
            Block::BottomUp(b) => b.params(),
            Block::Bottleneck(b) => b.params(),
            Block::Fusion(b) => b.params(),
        }
    }

    /// Final convolution of the residual branch, if the block is residual.
    pub fn residual_final(&self) -> Option<[ParamId; 2]> {
        match self {
            Block::TopDown(b) => Some(b.residual_final()),
            Block::BottomUp(b) => Some(b.residual_final()),
            Block::Bottleneck(b) => Some(b.residual_final()),
            Block::Fusion(_) => None,
        }
    }
}

/// One line of a schedule listing.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleRow {
    pub index: usize,
    pub layer: usize,
    pub stage: &'static str,
    pub mode: Mode,
    pub op: &'static str,
    pub level: usize,
    pub sources: Vec<String>,
    pub params: Vec<(String, Shape)>,
}

/// Compiled core: blocks plus the ordered stages that apply them.
#[derive(Clone, Debug)]
pub struct CoreGraph {
    pub spec: CoreSpec,
    pub blocks: Vec<Block>,
    pub stages: Vec<Stage>,
}

struct RunState {
    current: Pyramid<Var>,
    layer_input: Pyramid<Var>,
    top_down: Pyramid<Option<Var>>,
}

impl CoreGraph {
    pub fn num_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps.len()).sum()
    }

    /// Sets the read semantics of every communication stage.
    pub fn set_mode(&mut self, mode: Mode) {
        for s in &mut self.stages {
            if s.kind.is_communication() {
                s.mode = mode;
            }
        }
    }

    /// Weights and biases of every residual-final convolution.
    pub fn residual_finals(&self) -> Vec<ParamId> {
        self.blocks.iter().filter_map(Block::residual_final).flatten().collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(Block::params).collect()
    }

    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, input: &Pyramid<Var>) -> Result<Pyramid<Var>> {
        self.run_stages(tape, p, input, self.stages.len())
    }

    /// Runs only the first `count` stages.
    pub fn run_stages<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        input: &Pyramid<Var>,
        count: usize,
    ) -> Result<Pyramid<Var>> {
        check_levels(input, self.spec.min_level(), self.spec.max_level())?;
        for (_, &v) in input.iter() {
            let got = tape.shape(v).c;
            if got != self.spec.feature_size {
                return Err(Error::ChannelMismatch {
                    op: "core",
                    expected: self.spec.feature_size,
                    got,
                });
            }
        }
        let mut state = RunState {
            current: input.clone(),
            layer_input: input.clone(),
            top_down: input.map(|_| None),
        };
        let mut layer = None;
        for stage in self.stages.iter().take(count) {
            if layer != Some(stage.layer) {
                layer = Some(stage.layer);
                state.layer_input = state.current.clone();
                state.top_down = input.map(|_| None);
            }
            let snapshot = state.current.clone();
            for step in &stage.steps {
                let sources = step
                    .sources
                    .iter()
                    .map(|&s| resolve(&state, &snapshot, stage.mode, s))
                    .collect::<Result<Vec<Var>>>()?;
                let target = *state.current.get(step.target);
                let out = match &self.blocks[step.block] {
                    Block::TopDown(op) => op.apply(tape, p, target, sources[0])?,
                    Block::BottomUp(op) => op.apply(tape, p, target, sources[0])?,
                    Block::Bottleneck(b) => b.apply(tape, p, target)?,
                    Block::Fusion(f) => {
                        let s = tape.shape(*state.layer_input.get(step.target));
                        f.apply(tape, p, &sources, (s.h, s.w))?
                    }
                };
                match step.dest {
                    Dest::Level => state.current.set(step.target, out),
                    Dest::TopDown => state.top_down.set(step.target, Some(out)),
                }
            }
        }
        Ok(state.current)
    }

    /// Applies the core to concrete maps with parameters recorded as constants.
    pub fn run_tensors<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        input: &FeaturePyramid<T>,
    ) -> Result<FeaturePyramid<T>> {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let vars = input.record(&mut tape);
        let out = self.run(&mut tape, &p, &vars)?;
        Ok(out.values(&tape))
    }

    /// Convolutions executed for the given per-level spatial sizes.
    pub fn trace(&self, sizes: &[(usize, usize)], out: &mut Vec<ConvRecord>) -> Result<()> {
        if sizes.len() != self.spec.num_levels() {
            return Err(Error::invalid(
                "core",
                format!("{} sizes for {} levels", sizes.len(), self.spec.num_levels()),
            ));
        }
        let size = |l: usize| sizes[l - self.spec.min_level()];
        for step in self.stages.iter().flat_map(|s| &s.steps) {
            let l = step.target;
            match &self.blocks[step.block] {
                Block::TopDown(op) => op.trace(size(l + 1), out)?,
                Block::BottomUp(op) => op.trace(size(l - 1), out)?,
                Block::Bottleneck(b) => b.trace(size(l).0, size(l).1, out)?,
                Block::Fusion(f) => f.trace(size(l), out)?,
            }
        }
        Ok(())
    }

    pub fn schedule(&self, reg: &Registry) -> Vec<ScheduleRow> {
        let mut rows = Vec::with_capacity(self.num_steps());
        for stage in &self.stages {
            for step in &stage.steps {
                let block = &self.blocks[step.block];
                rows.push(ScheduleRow {
                    index: rows.len(),
                    layer: stage.layer,
                    stage: stage.kind.name(),
                    mode: stage.mode,
                    op: block.name(),
                    level: step.target,
                    sources: step.sources.iter().map(|s| s.label()).collect(),
                    params: block
                        .params()
                        .into_iter()
                        .map(|id| {
                            let d = reg.desc(id);
                            (d.name.clone(), d.shape)
                        })
                        .collect(),
                });
            }
        }
        rows
    }
}

fn resolve(state: &RunState, snapshot: &Pyramid<Var>, mode: Mode, source: Source) -> Result<Var> {
    match source {
        Source::Level(l) => Ok(match mode {
            Mode::Sequential => *state.current.get(l),
            Mode::Parallel => *snapshot.get(l),
        }),
        Source::LayerInput(l) => Ok(*state.layer_input.get(l)),
        Source::TopDown(l) => (*state.top_down.get(l))
            .ok_or_else(|| Error::invalid("core", format!("top-down map P{l} read before it was computed"))),
    }
}
