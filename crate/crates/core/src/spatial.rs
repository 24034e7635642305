//! Spatial blocks: the basic per-frame joint transformer, focal joint
//! selection, body-part encoding, joint-part cross-attention, and their
//! composition into the focal/global spatial block used in stage 2.

use serde::{Deserialize, Serialize};

use crate::attention::{position_rows, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::params::{Init, ParamBuilder, ParamId, Params};
use crate::tensor::Tensor;

/// Identity of each token slot, used to index the joint-type position
/// encoding and the global attention map.
#[derive(Clone, Copy, Debug)]
pub enum TokenIds<'a> {
    /// Slot `j` is id `j` in every frame.
    Static,
    /// `ids[t][j]` is the id held by slot `j` in frame `t`.
    PerFrame(&'a [Vec<usize>]),
}

/// Per-frame multi-head self-attention over tokens with a learned global
/// attention map, followed by a one-layer Leaky ReLU feed-forward. Both
/// sub-layers are residual.
#[derive(Clone, Debug)]
pub struct BasicSFormer {
    channels: usize,
    id_count: usize,
    mha: MultiHeadAttention,
    global_map: ParamId,
    ffn_w: ParamId,
    ffn_b: ParamId,
    slope: f64,
}

/// Output of a spatial block.
pub struct SpatialOutput {
    /// `[n, T, C]`
    pub features: Tensor,
    /// Per-frame softmax maps `[T, H, n, n]`, without the global map.
    pub attention: Tensor,
}

impl BasicSFormer {
    /// `id_count` is the number of distinct token identities: the joint count
    /// for joint streams, the part count for the part stream.
    pub fn new(
        b: &mut ParamBuilder,
        channels: usize,
        heads: usize,
        id_count: usize,
        slope: f64,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::config(format!(
                "spatial channels must be even for position encoding, got {channels}"
            )));
        }
        let mha = b.scope("attn", |b| {
            MultiHeadAttention::new(b, channels, channels, heads)
        })?;
        let global_map = b.param("global_map", &[id_count, id_count], Init::Zeros)?;
        let ffn_w = b.param(
            "ffn.w",
            &[channels, channels],
            Init::Branch {
                fan_in: channels,
                fan_out: channels,
            },
        )?;
        let ffn_b = b.param("ffn.b", &[channels], Init::Zeros)?;
        Ok(BasicSFormer {
            channels,
            id_count,
            mha,
            global_map,
            ffn_w,
            ffn_b,
            slope,
        })
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.mha
    }

    pub fn global_map(&self) -> ParamId {
        self.global_map
    }

    pub fn ffn(&self) -> (ParamId, ParamId) {
        (self.ffn_w, self.ffn_b)
    }

    pub fn forward(&self, p: &Params, x: &Tensor, ids: TokenIds<'_>) -> Result<SpatialOutput> {
        let (n, t) = self.check_input(x, ids)?;
        let frames = x.permute(&[1, 0, 2])?;
        let (pe, global) = match ids {
            TokenIds::Static => {
                let pe = Tensor::new(position_rows(0..n, self.channels), &[n, self.channels])?;
                (pe, p.get(self.global_map).clone())
            }
            TokenIds::PerFrame(ids) => {
                let pe = Tensor::new(
                    position_rows(ids.iter().flatten().copied(), self.channels),
                    &[t, n, self.channels],
                )?;
                let pairs: Vec<usize> = ids
                    .iter()
                    .flat_map(|row| {
                        row.iter()
                            .flat_map(move |&a| row.iter().map(move |&b| a * self.id_count + b))
                    })
                    .collect();
                let global = p
                    .get(self.global_map)
                    .reshape(&[self.id_count * self.id_count])?
                    .gather(0, &pairs)?
                    .reshape(&[t, 1, n, n])?;
                (pe, global)
            }
        };
        let z = frames.add(&pe)?;
        let attn = self.mha.forward(p, &z, Some(&global))?;
        let y = z.add(&attn.output)?;
        let out = y.add(&feed_forward(p, &y, self.ffn_w, self.ffn_b, self.slope)?)?;
        Ok(SpatialOutput {
            features: out.permute(&[1, 0, 2])?,
            attention: attn.weights,
        })
    }

    fn check_input(&self, x: &Tensor, ids: TokenIds<'_>) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "spatial block input [n, T, C]",
                lhs: s.to_vec(),
                rhs: vec![self.channels],
            });
        }
        let (n, t) = (s[0], s[1]);
        match ids {
            TokenIds::Static if n != self.id_count => Err(Error::ShapeMismatch {
                op: "spatial block token count",
                lhs: s.to_vec(),
                rhs: vec![self.id_count],
            }),
            TokenIds::PerFrame(ids) => {
                if ids.len() != t || ids.iter().any(|r| r.len() != n) {
                    return Err(Error::invalid(format!(
                        "token ids must be {t} frames of {n} ids"
                    )));
                }
                if let Some(&bad) = ids.iter().flatten().find(|&&i| i >= self.id_count) {
                    return Err(Error::IndexOutOfRange {
                        index: bad,
                        extent: self.id_count,
                    });
                }
                Ok((n, t))
            }
            TokenIds::Static => Ok((n, t)),
        }
    }
}

pub(crate) fn feed_forward(
    p: &Params,
    x: &Tensor,
    w: ParamId,
    b: ParamId,
    slope: f64,
) -> Result<Tensor> {
    Ok(x.linear(p.get(w), Some(p.get(b)))?.leaky_relu(slope))
}

/// How focal joints are ranked across time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Independent top-K in every frame.
    #[default]
    PerFrame,
    /// One top-K by frame-averaged score, shared by all frames.
    Sequence,
}

/// Result of focal joint selection on `[N, T, C]` features.
pub struct FocalSelection {
    /// Informativeness `[N, T]`, in `(0, 1)`.
    pub scores: Tensor,
    /// `indices[t]` holds the `K` selected joints of frame `t`, best first.
    pub indices: Vec<Vec<usize>>,
    /// Selected features scaled by their scores, `[K, T, C]`.
    pub gated: Tensor,
}

/// Indices of the `k` largest scores, descending; ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Score every joint with `sigmoid(x · w / ‖w‖)` and keep the top `k` per
/// frame (or per sequence), gating kept features by their scores so the
/// projection receives a gradient.
pub fn focal_joint_select(
    x: &Tensor,
    projection: &Tensor,
    k: usize,
    mode: SelectionMode,
) -> Result<FocalSelection> {
    let s = x.shape();
    if s.len() != 3 || projection.shape() != [s[2], 1] {
        return Err(Error::ShapeMismatch {
            op: "focal selection",
            lhs: s.to_vec(),
            rhs: projection.shape().to_vec(),
        });
    }
    let (n, t, c) = (s[0], s[1], s[2]);
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "focal joint count {k} must lie in 1..={n}"
        )));
    }
    let unit = projection
        .l2_normalize()
        .map_err(|_| Error::invalid("focal projection has zero or non-finite norm"))?;
    let scores = x.matmul(&unit)?.sigmoid().reshape(&[n, t])?;
    let sd = scores.data();
    let indices: Vec<Vec<usize>> = match mode {
        SelectionMode::PerFrame => (0..t)
            .map(|f| {
                let column: Vec<f64> = (0..n).map(|j| sd[j * t + f]).collect();
                top_k_indices(&column, k)
            })
            .collect(),
        SelectionMode::Sequence => {
            let mean: Vec<f64> = (0..n)
                .map(|j| sd[j * t..(j + 1) * t].iter().sum::<f64>() / t as f64)
                .collect();
            vec![top_k_indices(&mean, k); t]
        }
    };
    // slot-major so the gathered rows reshape to [K, T, ..]
    let flat: Vec<usize> = (0..k)
        .flat_map(|slot| indices.iter().enumerate().map(move |(f, row)| row[slot] * t + f))
        .collect();
    let features = x.reshape(&[n * t, c])?.gather(0, &flat)?.reshape(&[k, t, c])?;
    let gates = scores.reshape(&[n * t])?.gather(0, &flat)?.reshape(&[k, t])?;
    let gated = features.scale_by(&gates)?;
    Ok(FocalSelection {
        scores,
        indices,
        gated,
    })
}

/// Learned focal joint selector.
#[derive(Clone, Debug)]
pub struct FocalSelector {
    projection: ParamId,
    k: usize,
    mode: SelectionMode,
}

impl FocalSelector {
    pub fn new(b: &mut ParamBuilder, channels: usize, k: usize, mode: SelectionMode) -> Result<Self> {
        let projection = b.param(
            "projection",
            &[channels, 1],
            Init::Normal {
                std: 1.0 / (channels as f64).sqrt(),
            },
        )?;
        Ok(FocalSelector { projection, k, mode })
    }

    pub fn projection(&self) -> ParamId {
        self.projection
    }

    pub fn select(&self, p: &Params, x: &Tensor) -> Result<FocalSelection> {
        focal_joint_select(x, p.get(self.projection), self.k, self.mode)
    }
}

/// Assignment of the joints of one skeleton layout to body parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionMap {
    layout_id: String,
    joints: usize,
    groups: Vec<Vec<usize>>,
}

impl PartitionMap {
    /// Groups must be non-empty, disjoint, and cover `0..joints`.
    pub fn new(layout_id: impl Into<String>, joints: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let layout_id = layout_id.into();
        if groups.is_empty() || groups.iter().any(Vec::is_empty) {
            return Err(Error::config(format!(
                "partition for `{layout_id}` needs non-empty groups"
            )));
        }
        let mut seen = vec![false; joints];
        for &j in groups.iter().flatten() {
            if j >= joints {
                return Err(Error::config(format!(
                    "partition for `{layout_id}` names joint {j} of {joints}"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::config(format!(
                    "partition for `{layout_id}` lists joint {j} twice"
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!(
                "partition for `{layout_id}` leaves joint {missing} unassigned"
            )));
        }
        Ok(PartitionMap {
            layout_id,
            joints,
            groups,
        })
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn parts(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Common group size `m`: the largest natural group.
    pub fn group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Every group padded to `m` entries by repeating its first (anchor) joint.
    pub fn padded(&self) -> Vec<Vec<usize>> {
        let m = self.group_size();
        self.groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.resize(m, g[0]);
                g
            })
            .collect()
    }

    /// Same partition with groups listed in `order`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let groups = order
            .iter()
            .map(|&i| {
                self.groups.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    extent: self.groups.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PartitionMap::new(self.layout_id.clone(), self.joints, groups)
    }
}

/// Concatenate each part's joint features and map them through one linear
/// layer shared by all parts: `[N, T, C] → [P, T, C_out]`.
pub fn part_partition_encode(
    x: &Tensor,
    map: &PartitionMap,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || s[0] != map.joints() {
        return Err(Error::LayoutMismatch(format!(
            "partition `{}` expects {} joints, features have shape {s:?}",
            map.layout_id(),
            map.joints()
        )));
    }
    let (t, c) = (s[1], s[2]);
    let (parts, m) = (map.parts(), map.group_size());
    let flat: Vec<usize> = map.padded().into_iter().flatten().collect();
    x.gather(0, &flat)?
        .reshape(&[parts, m, t, c])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[parts, t, m * c])?
        .linear(weight, bias)
}

#[derive(Clone, Debug)]
pub struct PartEncoder {
    map: PartitionMap,
    weight: ParamId,
    bias: ParamId,
}

impl PartEncoder {
    pub fn new(b: &mut ParamBuilder, map: PartitionMap, channels: usize) -> Result<Self> {
        let fan_in = map.group_size() * channels;
        let weight = b.param(
            "w",
            &[fan_in, channels],
            Init::Xavier {
                fan_in,
                fan_out: channels,
            },
        )?;
        let bias = b.param("b", &[channels], Init::Zeros)?;
        Ok(PartEncoder { map, weight, bias })
    }

    pub fn map(&self) -> &PartitionMap {
        &self.map
    }

    pub fn weights(&self) -> (ParamId, ParamId) {
        (self.weight, self.bias)
    }

    pub fn encode(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        part_partition_encode(x, &self.map, p.get(self.weight), Some(p.get(self.bias)))
    }
}

/// One direction of joint-part cross-attention: queries from the target
/// stream, keys and values from the source stream, then residual and FFN.
#[derive(Clone, Debug)]
pub struct CrossAttentionBranch {
    mha: MultiHeadAttention,
    ffn_w: ParamId,
    ffn_b: ParamId,
}

impl CrossAttentionBranch {
    fn new(b: &mut ParamBuilder, channels: usize, heads: usize) -> Result<Self> {
        let mha = b.scope("attn", |b| {
            MultiHeadAttention::new(b, channels, channels, heads)
        })?;
        let ffn_w = b.param(
            "ffn.w",
            &[channels, channels],
            Init::Branch {
                fan_in: channels,
                fan_out: channels,
            },
        )?;
        let ffn_b = b.param("ffn.b", &[channels], Init::Zeros)?;
        Ok(CrossAttentionBranch { mha, ffn_w, ffn_b })
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.mha
    }

    pub fn ffn(&self) -> (ParamId, ParamId) {
        (self.ffn_w, self.ffn_b)
    }

    /// Frame-major `[T, n, C]` inputs.
    fn forward(&self, p: &Params, target: &Tensor, source: &Tensor, slope: f64) -> Result<(Tensor, Tensor)> {
        let attn = self.mha.attend(p, target, source, None)?;
        let y = target.add(&attn.output)?;
        let out = y.add(&feed_forward(p, &y, self.ffn_w, self.ffn_b, slope)?)?;
        Ok((out, attn.weights))
    }
}

/// Bidirectional joint-part cross-attention.
#[derive(Clone, Debug)]
pub struct JointPartCrossAttention {
    to_joints: CrossAttentionBranch,
    to_parts: CrossAttentionBranch,
    slope: f64,
}

pub struct CrossAttentionOutput {
    pub joints: Tensor,
    pub parts: Tensor,
    /// Joint queries over part keys, `[T, H, K, P]`.
    pub joint_part: Tensor,
    /// Part queries over joint keys, `[T, H, P, K]`.
    pub part_joint: Tensor,
}

impl JointPartCrossAttention {
    pub fn new(b: &mut ParamBuilder, channels: usize, heads: usize, slope: f64) -> Result<Self> {
        Ok(JointPartCrossAttention {
            to_joints: b.scope("to_joints", |b| CrossAttentionBranch::new(b, channels, heads))?,
            to_parts: b.scope("to_parts", |b| CrossAttentionBranch::new(b, channels, heads))?,
            slope,
        })
    }

    pub fn to_joints(&self) -> &CrossAttentionBranch {
        &self.to_joints
    }

    pub fn to_parts(&self) -> &CrossAttentionBranch {
        &self.to_parts
    }

    /// Both directions read the same inputs `[K, T, C]` and `[P, T, C]`.
    pub fn forward(&self, p: &Params, joints: &Tensor, parts: &Tensor) -> Result<CrossAttentionOutput> {
        let (sj, sp) = (joints.shape(), parts.shape());
        if sj.len() != 3 || sp.len() != 3 || sj[1..] != sp[1..] {
            return Err(Error::ShapeMismatch {
                op: "joint-part cross-attention",
                lhs: sj.to_vec(),
                rhs: sp.to_vec(),
            });
        }
        let jt = joints.permute(&[1, 0, 2])?;
        let pt = parts.permute(&[1, 0, 2])?;
        let (j_out, joint_part) = self.to_joints.forward(p, &jt, &pt, self.slope)?;
        let (p_out, part_joint) = self.to_parts.forward(p, &pt, &jt, self.slope)?;
        Ok(CrossAttentionOutput {
            joints: j_out.permute(&[1, 0, 2])?,
            parts: p_out.permute(&[1, 0, 2])?,
            joint_part,
            part_joint,
        })
    }
}

/// Stage-2 spatial block: a basic spatial sub-block per stream, then
/// (optionally) joint-part cross-attention between the streams.
#[derive(Clone, Debug)]
pub struct FgSFormer {
    joints: BasicSFormer,
    parts: BasicSFormer,
    cross: Option<JointPartCrossAttention>,
}

pub struct FgSFormerOutput {
    pub joints: Tensor,
    pub parts: Tensor,
    pub joint_attention: Tensor,
    pub part_attention: Tensor,
    pub cross: Option<CrossAttentionOutput>,
}

impl FgSFormer {
    pub fn new(
        b: &mut ParamBuilder,
        channels: usize,
        heads: usize,
        joint_ids: usize,
        parts: usize,
        cross_attention: bool,
        slope: f64,
    ) -> Result<Self> {
        let joints = b.scope("joints", |b| BasicSFormer::new(b, channels, heads, joint_ids, slope))?;
        let parts = b.scope("parts", |b| BasicSFormer::new(b, channels, heads, parts, slope))?;
        let cross = if cross_attention {
            Some(b.scope("cross", |b| JointPartCrossAttention::new(b, channels, heads, slope))?)
        } else {
            None
        };
        Ok(FgSFormer {
            joints,
            parts,
            cross,
        })
    }

    pub fn joint_block(&self) -> &BasicSFormer {
        &self.joints
    }

    pub fn part_block(&self) -> &BasicSFormer {
        &self.parts
    }

    pub fn cross_attention(&self) -> Option<&JointPartCrossAttention> {
        self.cross.as_ref()
    }

    pub fn forward(
        &self,
        p: &Params,
        joints: &Tensor,
        joint_ids: TokenIds<'_>,
        parts: &Tensor,
    ) -> Result<FgSFormerOutput> {
        let j = self.joints.forward(p, joints, joint_ids)?;
        let pt = self.parts.forward(p, parts, TokenIds::Static)?;
        match &self.cross {
            Some(cross) => {
                let c = cross.forward(p, &j.features, &pt.features)?;
                Ok(FgSFormerOutput {
                    joints: c.joints.clone(),
                    parts: c.parts.clone(),
                    joint_attention: j.attention,
                    part_attention: pt.attention,
                    cross: Some(c),
                })
            }
            None => Ok(FgSFormerOutput {
                joints: j.features,
                parts: pt.features,
                joint_attention: j.attention,
                part_attention: pt.attention,
                cross: None,
            }),
        }
    }
}
