//! Skeleton sequences, preprocessing, modality derivation, on-disk formats
//! and the synthetic action generator.

pub mod container;
pub mod layout;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use container::{
    decode_sample, encode_sample, read_manifest, read_sample, write_manifest, write_sample, ManifestEntry, Split,
};
pub use layout::SkeletonLayout;
pub use synthetic::{generate_dataset, generate_synthetic, ActionClass, DatasetSpec, SyntheticSpec};

/// Default temporal length after resampling.
pub const DEFAULT_FRAMES: usize = 128;

/// One action sample: coordinates `[N, T, C0]`, joint-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    layout_id: String,
    joints: usize,
    frames: usize,
    channels: usize,
    label: usize,
    data: Vec<f64>,
}

impl SkeletonSequence {
    pub fn new(
        layout_id: impl Into<String>,
        joints: usize,
        frames: usize,
        channels: usize,
        label: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if joints == 0 || frames == 0 || !(2..=3).contains(&channels) {
            return Err(Error::invalid(format!(
                "sequence needs joints ≥ 1, frames ≥ 1 and 2 or 3 channels, got {joints}×{frames}×{channels}"
            )));
        }
        if data.len() != joints * frames * channels {
            return Err(Error::ShapeMismatch {
                op: "skeleton sequence",
                lhs: vec![joints, frames, channels],
                rhs: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let c = i % channels;
            let t = (i / channels) % frames;
            let j = i / (channels * frames);
            return Err(Error::invalid(format!(
                "non-finite coordinate at joint {j}, frame {t}, channel {c}"
            )));
        }
        Ok(SkeletonSequence {
            layout_id: layout_id.into(),
            joints,
            frames,
            channels,
            label,
            data,
        })
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    #[inline]
    pub fn at(&self, joint: usize, frame: usize, channel: usize) -> f64 {
        self.data[(joint * self.frames + frame) * self.channels + channel]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[self.joints, self.frames, self.channels])
            .expect("validated on construction")
    }

    fn with_data(&self, frames: usize, data: Vec<f64>) -> Result<Self> {
        SkeletonSequence::new(
            self.layout_id.clone(),
            self.joints,
            frames,
            self.channels,
            self.label,
            data,
        )
    }

    fn check_layout(&self, layout: &SkeletonLayout) -> Result<()> {
        if layout.id != self.layout_id || layout.joints != self.joints {
            return Err(Error::LayoutMismatch(format!(
                "sequence is `{}` with {} joints, layout is `{}` with {}",
                self.layout_id, self.joints, layout.id, layout.joints
            )));
        }
        Ok(())
    }
}

/// Input modality of one stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    #[default]
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl StreamKind {
    pub const ALL: [StreamKind; 4] = [
        StreamKind::Joint,
        StreamKind::Bone,
        StreamKind::JointMotion,
        StreamKind::BoneMotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Joint => "joint",
            StreamKind::Bone => "bone",
            StreamKind::JointMotion => "joint-motion",
            StreamKind::BoneMotion => "bone-motion",
        }
    }
}

impl std::str::FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('-', "_") == s)
            .ok_or_else(|| Error::config(format!("unknown stream `{s}`")))
    }
}

impl std::fmt::Display for StreamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Linear-interpolation resampling to exactly `target` frames; the first and
/// last frames map onto each other.
pub fn resample(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::invalid("cannot resample to zero frames"));
    }
    let src = seq.frames;
    if src == target {
        return Ok(seq.clone());
    }
    let c = seq.channels;
    let mut out = Vec::with_capacity(seq.joints * target * c);
    for j in 0..seq.joints {
        for i in 0..target {
            let pos = if target == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (target - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let w = pos - lo as f64;
            for ch in 0..c {
                let a = seq.at(j, lo, ch);
                let b = seq.at(j, hi, ch);
                out.push(if w == 0.0 { a } else { a + (b - a) * w });
            }
        }
    }
    seq.with_data(target, out)
}

/// Translate so the layout's center joint sits at the origin in frame 0.
pub fn normalize(seq: &SkeletonSequence, layout: &SkeletonLayout) -> Result<SkeletonSequence> {
    seq.check_layout(layout)?;
    let first = &seq.data[..seq.channels];
    if seq
        .data
        .chunks(seq.channels)
        .all(|p| p == first)
    {
        return Err(Error::invalid(
            "degenerate skeleton: every joint in every frame has the same coordinates",
        ));
    }
    let origin: Vec<f64> = (0..seq.channels).map(|c| seq.at(layout.center, 0, c)).collect();
    let data = seq
        .data
        .chunks(seq.channels)
        .flat_map(|p| p.iter().zip(&origin).map(|(v, o)| v - o))
        .collect();
    seq.with_data(seq.frames, data)
}

/// Derive one of the four input modalities. Bones are child minus parent
/// (zero at the root); motion is the next frame minus the current one (zero
/// in the last frame).
pub fn derive_modality(
    seq: &SkeletonSequence,
    layout: &SkeletonLayout,
    kind: StreamKind,
) -> Result<SkeletonSequence> {
    seq.check_layout(layout)?;
    match kind {
        StreamKind::Joint => Ok(seq.clone()),
        StreamKind::Bone => bones(seq, layout),
        StreamKind::JointMotion => Ok(motion(seq)),
        StreamKind::BoneMotion => Ok(motion(&bones(seq, layout)?)),
    }
}

fn bones(seq: &SkeletonSequence, layout: &SkeletonLayout) -> Result<SkeletonSequence> {
    let parents = layout.parents();
    let (t, c) = (seq.frames, seq.channels);
    let mut data = vec![0.0; seq.data.len()];
    for (j, parent) in parents.iter().enumerate() {
        let Some(p) = *parent else { continue };
        for f in 0..t {
            for ch in 0..c {
                data[(j * t + f) * c + ch] = seq.at(j, f, ch) - seq.at(p, f, ch);
            }
        }
    }
    seq.with_data(t, data)
}

fn motion(seq: &SkeletonSequence) -> SkeletonSequence {
    let (t, c) = (seq.frames, seq.channels);
    let mut data = vec![0.0; seq.data.len()];
    for j in 0..seq.joints {
        for f in 0..t.saturating_sub(1) {
            for ch in 0..c {
                data[(j * t + f) * c + ch] = seq.at(j, f + 1, ch) - seq.at(j, f, ch);
            }
        }
    }
    seq.with_data(t, data).expect("same shape as a valid sequence")
}
