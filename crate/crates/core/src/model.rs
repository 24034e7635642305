//! Two-stage network assembly, ablation variants and stream fusion.
//!
//! Stage 1 stacks basic spatial blocks and temporal blocks over all joints.
//! The split then selects focal joints and encodes body parts; stage 2 runs
//! the two branches side by side. Each branch is average-pooled over tokens
//! and time, the pools are concatenated, and two linear layers classify.

use serde::{Deserialize, Serialize};

use crate::data::{SkeletonLayout, StreamKind};
use crate::error::{AtLayer, Error, Result};
use crate::params::{Init, ParamBuilder, ParamId, ParamSet, Params};
use crate::record::{AttentionMap, AttentionRecord, LayerRecord};
use crate::spatial::{
    BasicSFormer, FgSFormer, FocalSelector, PartEncoder, PartitionMap, SelectionMode, TokenIds,
};
use crate::temporal::{TemporalBlock, TemporalKind};
use crate::tensor::Tensor;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Stage-2 components that can be switched off.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub focal_selection: bool,
    pub part_branch: bool,
    pub joint_part_attention: bool,
    #[serde(default)]
    pub temporal: TemporalKind,
    #[serde(default)]
    pub selection: SelectionMode,
}

impl Default for Ablation {
    fn default() -> Self {
        Variant::C.ablation()
    }
}

/// Named spatial configurations: all-basic baseline, then focal selection,
/// part branch and joint-part cross-attention added one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    BasicS,
    A,
    B,
    C,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::BasicS, Variant::A, Variant::B, Variant::C];

    pub fn ablation(self) -> Ablation {
        let (focal_selection, part_branch, joint_part_attention) = match self {
            Variant::BasicS => (false, false, false),
            Variant::A => (true, false, false),
            Variant::B => (true, true, false),
            Variant::C => (true, true, true),
        };
        Ablation {
            focal_selection,
            part_branch,
            joint_part_attention,
            temporal: TemporalKind::Fg,
            selection: SelectionMode::PerFrame,
        }
    }

    /// Set the spatial toggles, leaving the temporal kind and selection mode.
    pub fn apply(self, ablation: &mut Ablation) {
        let v = self.ablation();
        ablation.focal_selection = v.focal_selection;
        ablation.part_branch = v.part_branch;
        ablation.joint_part_attention = v.joint_part_attention;
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic-s" | "baseline" => Ok(Variant::BasicS),
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" | "full" => Ok(Variant::C),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    /// Skeleton layout id; supplies the partition unless `partition` is set.
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<Vec<usize>>>,
    pub joints: usize,
    pub frames: usize,
    pub in_channels: usize,
    /// Output width of every layer, stage 1 then stage 2.
    pub channels: Vec<usize>,
    pub stage1_layers: usize,
    pub stage2_layers: usize,
    /// 1-based layers that double the width and halve the frames.
    pub downsample_layers: Vec<usize>,
    pub spatial_heads: usize,
    pub temporal_kernel: usize,
    /// One temporal head per dilation.
    pub temporal_dilations: Vec<usize>,
    pub focal_joints: usize,
    pub parts: usize,
    pub classes: usize,
    pub hidden: usize,
    pub negative_slope: f64,
    #[serde(default)]
    pub stream: StreamKind,
    #[serde(default)]
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Full-size configuration on the 25-joint layout.
    pub fn full(classes: usize) -> Self {
        ModelConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            layout: "ntu-25".into(),
            partition: None,
            joints: 25,
            frames: 128,
            in_channels: 3,
            channels: vec![64, 64, 128, 128, 256, 256, 256, 256],
            stage1_layers: 6,
            stage2_layers: 2,
            downsample_layers: vec![3, 5],
            spatial_heads: 3,
            temporal_kernel: 7,
            temporal_dilations: vec![1, 2],
            focal_joints: 15,
            parts: 10,
            classes,
            hidden: 256,
            negative_slope: 0.1,
            stream: StreamKind::Joint,
            ablation: Ablation::default(),
        }
    }

    /// Tiny six-joint network for smoke and gradient tests.
    pub fn toy() -> Self {
        ModelConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            layout: "toy-6".into(),
            partition: Some(vec![vec![0, 1, 2], vec![3, 4, 5]]),
            joints: 6,
            frames: 8,
            in_channels: 3,
            channels: vec![8, 16],
            stage1_layers: 1,
            stage2_layers: 1,
            downsample_layers: vec![2],
            spatial_heads: 1,
            temporal_kernel: 3,
            temporal_dilations: vec![1],
            focal_joints: 3,
            parts: 2,
            classes: 4,
            hidden: 8,
            negative_slope: 0.1,
            stream: StreamKind::Joint,
            ablation: Ablation::default(),
        }
    }

    /// Desk-scale network on the synthetic 12-joint skeleton.
    pub fn desk(classes: usize) -> Self {
        ModelConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            layout: "synthetic-12".into(),
            partition: None,
            joints: 12,
            frames: 32,
            in_channels: 3,
            channels: vec![16, 32],
            stage1_layers: 1,
            stage2_layers: 1,
            downsample_layers: vec![2],
            spatial_heads: 2,
            temporal_kernel: 7,
            temporal_dilations: vec![1, 2],
            focal_joints: 6,
            parts: 4,
            classes,
            hidden: 64,
            negative_slope: 0.1,
            stream: StreamKind::Joint,
            ablation: Ablation::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("model config: {e}")))
    }

    pub fn layers(&self) -> usize {
        self.stage1_layers + self.stage2_layers
    }

    /// Move the stage boundary, keeping the channel plan.
    pub fn with_stages(mut self, stage1: usize, stage2: usize) -> Result<Self> {
        if stage1 + stage2 != self.layers() {
            return Err(Error::config(format!(
                "stages {stage1},{stage2} must add up to {} layers",
                self.layers()
            )));
        }
        self.stage1_layers = stage1;
        self.stage2_layers = stage2;
        self.validate()?;
        Ok(self)
    }

    /// `(in, out)` width of 1-based `layer`.
    pub fn layer_channels(&self, layer: usize) -> (usize, usize) {
        let out = self.channels[layer - 1];
        let inp = if layer == 1 {
            self.channels[0]
        } else {
            self.channels[layer - 2]
        };
        (inp, out)
    }

    /// Number of stage-2 branches: joints, plus parts when enabled.
    pub fn branches(&self) -> usize {
        1 + usize::from(self.ablation.part_branch)
    }

    /// Width of the pooled feature fed to the classifier.
    pub fn pooled_width(&self) -> usize {
        self.branches() * self.channels.last().copied().unwrap_or(0)
    }

    pub fn partition_map(&self) -> Result<PartitionMap> {
        let map = match &self.partition {
            Some(groups) => PartitionMap::new(self.layout.clone(), self.joints, groups.clone())?,
            None => SkeletonLayout::builtin(&self.layout)?.partition()?,
        };
        if map.joints() != self.joints || map.parts() != self.parts {
            return Err(Error::config(format!(
                "partition of `{}` has {} joints in {} parts, config wants {} joints in {} parts",
                self.layout,
                map.joints(),
                map.parts(),
                self.joints,
                self.parts
            )));
        }
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not {CONFIG_SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.joints == 0 || self.frames == 0 || self.in_channels == 0 {
            return bad("joints, frames and in_channels must be positive".into());
        }
        if self.stage1_layers == 0 || self.stage2_layers == 0 {
            return bad("both stages need at least one layer".into());
        }
        if self.channels.len() != self.layers() {
            return bad(format!(
                "{} channel entries for {} + {} layers",
                self.channels.len(),
                self.stage1_layers,
                self.stage2_layers
            ));
        }
        let mut down = self.downsample_layers.clone();
        down.sort_unstable();
        down.dedup();
        if down.len() != self.downsample_layers.len() {
            return bad("downsample_layers has duplicates".into());
        }
        for layer in 1..=self.layers() {
            let (inp, out) = self.layer_channels(layer);
            if out == 0 || out % 2 != 0 {
                return bad(format!("layer {layer}: width {out} must be positive and even"));
            }
            let doubles = down.contains(&layer);
            if (doubles && out != 2 * inp) || (!doubles && out != inp) {
                return bad(format!(
                    "layer {layer}: {inp} -> {out} channels, but it is {}a downsample layer",
                    if doubles { "" } else { "not " }
                ));
            }
        }
        if down.iter().any(|&l| l == 0 || l > self.layers()) {
            return bad("downsample_layers must name layers of the network".into());
        }
        let factor = 1usize << down.len();
        if !self.frames.is_multiple_of(factor) {
            return bad(format!(
                "{} frames cannot be halved {} times",
                self.frames,
                down.len()
            ));
        }
        if self.spatial_heads == 0 || self.channels.iter().any(|&c| c / self.spatial_heads == 0) {
            return bad(format!("{} spatial heads do not fit the widths", self.spatial_heads));
        }
        let th = self.temporal_dilations.len();
        if th == 0 || self.temporal_dilations.contains(&0) {
            return bad("temporal_dilations must be non-empty and positive".into());
        }
        if self.channels.iter().any(|&c| c % th != 0) {
            return bad(format!("{th} temporal heads must divide every width"));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return bad(format!("temporal_kernel {} must be odd", self.temporal_kernel));
        }
        if self.ablation.focal_selection && !(1..=self.joints).contains(&self.focal_joints) {
            return bad(format!(
                "focal_joints {} must lie in 1..={}",
                self.focal_joints, self.joints
            ));
        }
        if self.ablation.joint_part_attention && !self.ablation.part_branch {
            return bad("joint_part_attention requires part_branch".into());
        }
        if self.ablation.part_branch {
            if self.parts == 0 {
                return bad("parts must be at least 1".into());
            }
            self.partition_map()?;
        }
        if self.classes == 0 || self.hidden == 0 {
            return bad("classes and hidden must be positive".into());
        }
        if !(self.negative_slope > 0.0 && self.negative_slope.is_finite()) {
            return bad(format!("negative_slope {} must be positive", self.negative_slope));
        }
        Ok(())
    }
}

/// Output shape of one named stage of the forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub struct ForwardOutput {
    /// `[classes]`
    pub logits: Tensor,
    pub trace: Vec<TraceEntry>,
    pub record: Option<AttentionRecord>,
}

#[derive(Clone, Debug)]
struct Stage1Layer {
    spatial: BasicSFormer,
    temporal: TemporalBlock,
}

#[derive(Clone, Debug)]
enum Stage2Spatial {
    Single(BasicSFormer),
    Dual(FgSFormer),
}

#[derive(Clone, Debug)]
struct Stage2Layer {
    spatial: Stage2Spatial,
    joint_temporal: TemporalBlock,
    part_temporal: Option<TemporalBlock>,
}

/// Network structure; parameter values live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    embed: (ParamId, ParamId),
    stage1: Vec<Stage1Layer>,
    selector: Option<FocalSelector>,
    part_encoder: Option<PartEncoder>,
    stage2: Vec<Stage2Layer>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

const SPATIAL_AXES: [&str; 4] = ["frame", "head", "query", "key"];
const TEMPORAL_AXES: [&str; 4] = ["token", "head", "query", "key"];

impl Network {
    /// Build the structure and initialize parameters from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<(Network, ParamSet)> {
        config.validate()?;
        let cfg = config;
        let mut b = ParamBuilder::new(seed);
        // every layer stacks a spatial and a temporal residual block
        b.set_residual_gain(1.0 / (2.0 * cfg.channels.len() as f64).sqrt());
        let slope = cfg.negative_slope;
        let c1 = cfg.channels[0];
        let embed = b.scope("embed", |b| {
            Ok((
                b.param(
                    "w",
                    &[cfg.in_channels, c1],
                    Init::Xavier {
                        fan_in: cfg.in_channels,
                        fan_out: c1,
                    },
                )?,
                b.param("b", &[c1], Init::Zeros)?,
            ))
        })?;
        let temporal = |b: &mut ParamBuilder, inp: usize, out: usize| {
            TemporalBlock::new(
                b,
                cfg.ablation.temporal,
                inp,
                out,
                cfg.temporal_kernel,
                &cfg.temporal_dilations,
                slope,
            )
        };

        let mut stage1 = Vec::new();
        for layer in 1..=cfg.stage1_layers {
            let (inp, out) = cfg.layer_channels(layer);
            let name = format!("layer{layer}");
            stage1.push(
                b.scope(&name, |b| {
                    Ok(Stage1Layer {
                        spatial: b.scope("spatial", |b| {
                            BasicSFormer::new(b, inp, cfg.spatial_heads, cfg.joints, slope)
                        })?,
                        temporal: b.scope("temporal", |b| temporal(b, inp, out))?,
                    })
                })
                .at(&name)?,
            );
        }

        let split_c = cfg.channels[cfg.stage1_layers - 1];
        let selector = if cfg.ablation.focal_selection {
            Some(
                b.scope("split.focal", |b| {
                    FocalSelector::new(b, split_c, cfg.focal_joints, cfg.ablation.selection)
                })
                .at("split.focal")?,
            )
        } else {
            None
        };
        let part_encoder = if cfg.ablation.part_branch {
            let map = cfg.partition_map()?;
            Some(
                b.scope("split.parts", |b| PartEncoder::new(b, map, split_c))
                    .at("split.parts")?,
            )
        } else {
            None
        };

        let mut stage2 = Vec::new();
        for layer in cfg.stage1_layers + 1..=cfg.layers() {
            let (inp, out) = cfg.layer_channels(layer);
            let name = format!("layer{layer}");
            stage2.push(
                b.scope(&name, |b| {
                    let spatial = if cfg.ablation.part_branch {
                        Stage2Spatial::Dual(b.scope("spatial", |b| {
                            FgSFormer::new(
                                b,
                                inp,
                                cfg.spatial_heads,
                                cfg.joints,
                                cfg.parts,
                                cfg.ablation.joint_part_attention,
                                slope,
                            )
                        })?)
                    } else {
                        Stage2Spatial::Single(b.scope("spatial.joints", |b| {
                            BasicSFormer::new(b, inp, cfg.spatial_heads, cfg.joints, slope)
                        })?)
                    };
                    let joint_temporal = b.scope("temporal.joints", |b| temporal(b, inp, out))?;
                    let part_temporal = if cfg.ablation.part_branch {
                        Some(b.scope("temporal.parts", |b| temporal(b, inp, out))?)
                    } else {
                        None
                    };
                    Ok(Stage2Layer {
                        spatial,
                        joint_temporal,
                        part_temporal,
                    })
                })
                .at(&name)?,
            );
        }

        let pooled = cfg.pooled_width();
        let (fc1, fc2) = b.scope("head", |b| {
            let fc1 = (
                b.param(
                    "fc1.w",
                    &[pooled, cfg.hidden],
                    Init::Xavier {
                        fan_in: pooled,
                        fan_out: cfg.hidden,
                    },
                )?,
                b.param("fc1.b", &[cfg.hidden], Init::Zeros)?,
            );
            // small logits at init keep the first loss near ln(classes)
            let fc2 = (
                b.param(
                    "fc2.w",
                    &[cfg.hidden, cfg.classes],
                    Init::Normal {
                        std: 0.01 / (cfg.hidden as f64).sqrt(),
                    },
                )?,
                b.param("fc2.b", &[cfg.classes], Init::Zeros)?,
            );
            Ok((fc1, fc2))
        })?;

        let net = Network {
            config: cfg.clone(),
            embed,
            stage1,
            selector,
            part_encoder,
            stage2,
            fc1,
            fc2,
        };
        Ok((net, b.finish()))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Class logits only, without trace bookkeeping or attention export.
    pub fn logits(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(p, x, false)?.logits)
    }

    /// Logits, shape trace and the full attention record.
    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<ForwardOutput> {
        self.run(p, x, true)
    }

    fn run(&self, p: &Params, x: &Tensor, keep_record: bool) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let expected = [cfg.joints, cfg.frames, cfg.in_channels];
        if x.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "network input [N, T, C0]",
                lhs: x.shape().to_vec(),
                rhs: expected.to_vec(),
            })
            .at("input");
        }
        let mut trace = Vec::new();
        let mut record = keep_record.then(|| AttentionRecord::new(&cfg.layout));
        let mut note = |name: &str, t: &Tensor| {
            trace.push(TraceEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
        };

        let mut h = x
            .linear(p.get(self.embed.0), Some(p.get(self.embed.1)))
            .at("embed")?;
        note("embed", &h);

        for (i, layer) in self.stage1.iter().enumerate() {
            let name = format!("layer{}", i + 1);
            let s = layer
                .spatial
                .forward(p, &h, TokenIds::Static)
                .at(format!("{name}.spatial"))?;
            let t = layer
                .temporal
                .forward(p, &s.features)
                .at(format!("{name}.temporal"))?;
            h = t.features;
            note(&name, &h);
            if let Some(rec) = record.as_mut() {
                let mut maps = vec![AttentionMap::from_tensor("spatial", &SPATIAL_AXES, &s.attention)];
                if let Some(a) = &t.attention {
                    maps.push(AttentionMap::from_tensor("temporal", &TEMPORAL_AXES, a));
                }
                rec.layers.push(LayerRecord {
                    layer: i + 1,
                    stage: 1,
                    maps,
                });
            }
        }

        let (mut joints, mut ids) = match &self.selector {
            Some(sel) => {
                let s = sel.select(p, &h).at("split.focal")?;
                if let Some(rec) = record.as_mut() {
                    rec.scores = Some(AttentionMap::from_tensor("scores", &["joint", "frame"], &s.scores));
                    rec.focal_indices = Some(s.indices.clone());
                }
                (s.gated, Some(s.indices))
            }
            None => (h.clone(), None),
        };
        let mut parts = match &self.part_encoder {
            Some(enc) => Some(enc.encode(p, &h).at("split.parts")?),
            None => None,
        };
        note("split.joints", &joints);
        if let Some(pt) = &parts {
            note("split.parts", pt);
        }

        for (i, layer) in self.stage2.iter().enumerate() {
            let index = cfg.stage1_layers + i + 1;
            let name = format!("layer{index}");
            let token_ids = match &ids {
                Some(v) => TokenIds::PerFrame(v),
                None => TokenIds::Static,
            };
            let mut maps = Vec::new();
            let (sj, sp) = match (&layer.spatial, &parts) {
                (Stage2Spatial::Single(block), _) => {
                    let out = block.forward(p, &joints, token_ids).at(format!("{name}.spatial"))?;
                    maps.push(("spatial.joints", SPATIAL_AXES, out.attention));
                    (out.features, None)
                }
                (Stage2Spatial::Dual(block), Some(pt)) => {
                    let out = block
                        .forward(p, &joints, token_ids, pt)
                        .at(format!("{name}.spatial"))?;
                    maps.push(("spatial.joints", SPATIAL_AXES, out.joint_attention));
                    maps.push(("spatial.parts", SPATIAL_AXES, out.part_attention));
                    if let Some(c) = out.cross {
                        maps.push(("cross.joint_part", SPATIAL_AXES, c.joint_part));
                        maps.push(("cross.part_joint", SPATIAL_AXES, c.part_joint));
                    }
                    (out.joints, Some(out.parts))
                }
                (Stage2Spatial::Dual(_), None) => unreachable!("part branch built without encoder"),
            };
            let frames_before = sj.shape()[1];
            let tj = layer
                .joint_temporal
                .forward(p, &sj)
                .at(format!("{name}.temporal.joints"))?;
            joints = tj.features;
            if let Some(a) = tj.attention {
                maps.push(("temporal.joints", TEMPORAL_AXES, a));
            }
            if let (Some(block), Some(sp)) = (&layer.part_temporal, sp) {
                let tp = block
                    .forward(p, &sp)
                    .at(format!("{name}.temporal.parts"))?;
                parts = Some(tp.features);
                if let Some(a) = tp.attention {
                    maps.push(("temporal.parts", TEMPORAL_AXES, a));
                }
            }
            // slot identities follow the frames kept by strided blocks
            if joints.shape()[1] != frames_before {
                ids = ids.map(|v| v.into_iter().step_by(2).collect());
            }
            note(&format!("{name}.joints"), &joints);
            if let Some(pt) = &parts {
                note(&format!("{name}.parts"), pt);
            }
            if let Some(rec) = record.as_mut() {
                rec.layers.push(LayerRecord {
                    layer: index,
                    stage: 2,
                    maps: maps
                        .iter()
                        .map(|(n, axes, t)| AttentionMap::from_tensor(n, axes, t))
                        .collect(),
                });
            }
        }

        let pool = |t: &Tensor| -> Result<Tensor> { t.mean(0)?.mean(0) };
        let mut pooled = vec![pool(&joints).at("pool")?];
        if let Some(pt) = &parts {
            pooled.push(pool(pt).at("pool")?);
        }
        let refs: Vec<&Tensor> = pooled.iter().collect();
        let features = Tensor::concat(&refs, 0).at("pool")?;
        note("pool", &features);
        let hidden = features
            .linear(p.get(self.fc1.0), Some(p.get(self.fc1.1)))
            .at("head.fc1")?
            .leaky_relu(cfg.negative_slope);
        let logits = hidden
            .linear(p.get(self.fc2.0), Some(p.get(self.fc2.1)))
            .at("head.fc2")?;
        note("logits", &logits);
        if let Some(rec) = record.as_mut() {
            rec.logits = logits.to_vec();
        }
        Ok(ForwardOutput {
            logits,
            trace,
            record,
        })
    }
}

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let (network, params) = Network::build(config, seed)?;
        Ok(Model { network, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Inference on constant parameters.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.network.logits(&self.params.bind_frozen(), x)?.to_vec())
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardOutput> {
        self.network.forward(&self.params.bind_frozen(), x)
    }
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Late fusion of independently trained streams: the sum of their class
/// probabilities with equal weights.
pub fn fuse_streams(logit_sets: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = logit_sets
        .first()
        .ok_or_else(|| Error::invalid("fusion needs at least one stream"))?;
    let classes = first.len();
    if classes == 0 {
        return Err(Error::invalid("fusion needs at least one class"));
    }
    let mut fused = vec![0.0; classes];
    for (s, logits) in logit_sets.iter().enumerate() {
        if logits.len() != classes {
            return Err(Error::config(format!(
                "stream {s} has {} classes, stream 0 has {classes}",
                logits.len()
            )));
        }
        for (f, p) in fused.iter_mut().zip(softmax(logits)) {
            *f += p;
        }
    }
    Ok(fused)
}
