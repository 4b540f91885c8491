//! Full detector: backbone, pyramid stem, core and head, described by a
//! JSON model file such as
//! `{"backbone": "tiny", "core": {"kind": "tpn", "L": 2, "B": 2}, "head": {"C": 1}}`.

use crate::analysis::flops::{total_flops, ConvRecord};
use crate::backbone::{Backbone, BackboneSpec};
use crate::blocks::PyramidStem;
use crate::cores::{build_core, CoreGraph, CoreSpec};
use crate::error::{Error, Result};
use crate::head::loss::LossConfig;
use crate::head::LevelOutput;
use crate::head::{
    decode_and_nms, detection_loss, DetectionSet, GroundTruth, Head, HeadSpec, InferConfig, LevelAnchors, LossBreakdown,
};
use crate::params::{Binding, ParamStore, Registry};
use crate::pyramid::{level_sizes, Pyramid};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub core: CoreSpec,
    #[serde(default)]
    pub head: HeadSpec,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn label(&self) -> String {
        format!(
            "{}+{}+head(C={})",
            self.backbone.label(),
            self.core.label(),
            self.head.hidden_layers
        )
    }
}

/// Values recorded by one forward pass.
pub struct ForwardOutput {
    pub features: Pyramid<Var>,
    pub head: Pyramid<LevelOutput>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub registry: Registry,
    pub backbone: Backbone,
    pub stem: PyramidStem,
    pub core: CoreGraph,
    pub head: Head,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        if spec.core.levels != [3, 7] {
            return Err(Error::config("a full model uses pyramid levels 3..=7"));
        }
        let mut registry = Registry::new();
        let backbone = Backbone::register(&mut registry, &spec.backbone)?;
        let stem = PyramidStem::register(
            &mut registry,
            "stem",
            spec.backbone.out_channels(),
            spec.core.feature_size,
        )?;
        let core = build_core(&mut registry, "core", &spec.core)?;
        let head = Head::register(&mut registry, "head", &spec.head, spec.core.feature_size)?;
        Ok(Model {
            spec: spec.clone(),
            registry,
            backbone,
            stem,
            core,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.registry.total()
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::init(&self.registry, seed)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.head.num_classes
    }

    /// Per-level `(h, w)` of P3–P7 for an `h × w` image.
    pub fn level_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        level_sizes(3, 7, (h.div_ceil(8), w.div_ceil(8)))
    }

    pub fn anchors(&self, h: usize, w: usize) -> Vec<LevelAnchors> {
        self.level_sizes(h, w)
            .into_iter()
            .enumerate()
            .map(|(i, (lh, lw))| self.head.anchors.level(3 + i, lh, lw))
            .collect()
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, images: Var) -> Result<ForwardOutput> {
        let [c3, c4, c5] = self.backbone.forward(tape, p, images)?;
        let pyr = self.stem.build(tape, p, c3, c4, c5)?;
        let features = self.core.run(tape, p, &pyr)?;
        let head = self.head.forward(tape, p, &features)?;
        Ok(ForwardOutput { features, head })
    }

    /// Records forward pass and loss; returns the scalar loss variable.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        images: Var,
        gts: &[GroundTruth],
        cfg: &LossConfig,
    ) -> Result<(Var, LossBreakdown)> {
        let s = tape.shape(images);
        let out = self.forward(tape, p, images)?;
        let anchors = self.anchors(s.h, s.w);
        detection_loss(tape, &out.head, &anchors, gts, self.num_classes(), cfg)
    }

    /// Inference on a batch; image ids are `first_id + batch index`.
    pub fn detect<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        images: &Tensor<T>,
        first_id: usize,
        cfg: &InferConfig,
    ) -> Result<Vec<DetectionSet>> {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &p, x)?;
        let s = images.shape();
        let anchors = self.anchors(s.h, s.w);
        let cls: Vec<&Tensor<T>> = out.head.maps().iter().map(|o| tape.value(o.cls)).collect();
        let boxes: Vec<&Tensor<T>> = out.head.maps().iter().map(|o| tape.value(o.boxes)).collect();
        (0..s.n)
            .map(|i| {
                let mut set = decode_and_nms(&cls, &boxes, &anchors, i, (s.h, s.w), self.num_classes(), cfg)?;
                set.image_id = first_id + i;
                Ok(set)
            })
            .collect()
    }

    /// Every convolution executed on one `h × w` image.
    pub fn conv_trace(&self, h: usize, w: usize) -> Result<Vec<ConvRecord>> {
        if !h.is_multiple_of(32) || !w.is_multiple_of(32) || h == 0 || w == 0 {
            return Err(Error::invalid(
                "flops",
                format!("image size {h}x{w} is not a positive multiple of 32"),
            ));
        }
        let mut out = Vec::new();
        let c = self.backbone.trace(h, w, &mut out)?;
        let levels = self.stem.trace(c, &mut out)?;
        self.core.trace(&levels, &mut out)?;
        self.head.trace(&levels, &mut out)?;
        Ok(out)
    }

    pub fn flops(&self, h: usize, w: usize) -> Result<u64> {
        Ok(total_flops(&self.conv_trace(h, w)?))
    }
}
