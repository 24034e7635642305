//! Procedural actions on the 12-joint synthetic skeleton.
//!
//! Each class drives a small kinematic chain with its own motion program.
//! Samples vary by amplitude, timing offset, body scale, heading and
//! position, and carry Gaussian coordinate noise. Output coordinates are
//! rounded to `f32` so they survive the sample container bit-exactly.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::container::Split;
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};

pub const SYNTHETIC_LAYOUT: &str = "synthetic-12";
const JOINTS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionClass {
    ArmRaise,
    LegKick,
    Clap,
    SitDown,
    Wave,
}

impl ActionClass {
    pub const ALL: [ActionClass; 5] = [
        ActionClass::ArmRaise,
        ActionClass::LegKick,
        ActionClass::Clap,
        ActionClass::SitDown,
        ActionClass::Wave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::ArmRaise => "arm-raise",
            ActionClass::LegKick => "leg-kick",
            ActionClass::Clap => "clap",
            ActionClass::SitDown => "sit-down",
            ActionClass::Wave => "wave",
        }
    }

    /// Cycles per sequence used when a spec does not override it.
    pub fn default_frequency(self) -> f64 {
        match self {
            ActionClass::Clap | ActionClass::Wave => 3.0,
            _ => 1.0,
        }
    }
}

impl std::str::FromStr for ActionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActionClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown action class `{s}`")))
    }
}

impl std::fmt::Display for ActionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub class: ActionClass,
    pub label: usize,
    pub frames: usize,
    pub amplitude: f64,
    /// Oscillation cycles over the whole sequence.
    pub frequency: f64,
    /// Standard deviation of the coordinate noise.
    pub noise: f64,
    /// Per-sample random variation of pose, timing and placement.
    pub jitter: bool,
}

impl SyntheticSpec {
    pub fn new(class: ActionClass, frames: usize) -> Self {
        SyntheticSpec {
            class,
            label: ActionClass::ALL.iter().position(|&c| c == class).unwrap(),
            frames,
            amplitude: 1.0,
            frequency: class.default_frequency(),
            noise: 0.0,
            jitter: true,
        }
    }
}

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scaled(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Unit limb direction: `elevation` 0 hangs down, π/2 is horizontal, π is
/// straight up; `azimuth` 0 points sideways (outwards by `side`), π/2 forward.
fn limb(elevation: f64, azimuth: f64, side: f64) -> Vec3 {
    let (se, ce) = elevation.sin_cos();
    [se * azimuth.cos() * side, -ce, se * azimuth.sin()]
}

struct Pose {
    pelvis_drop: f64,
    pelvis_back: f64,
    /// (upper elevation, upper azimuth, fore elevation, fore azimuth) per arm,
    /// left then right.
    arms: [[f64; 4]; 2],
    /// Explicit wrist targets override the arm angles.
    wrists: Option<[Vec3; 2]>,
    /// (thigh flexion, shank flexion) per leg, left then right.
    legs: [[f64; 2]; 2],
    lean: f64,
}

impl Pose {
    fn rest() -> Self {
        Pose {
            pelvis_drop: 0.0,
            pelvis_back: 0.0,
            arms: [[0.15, 0.0, 0.15, 0.3]; 2],
            wrists: None,
            legs: [[0.0, 0.0]; 2],
            lean: 0.0,
        }
    }

    fn joints(&self) -> [Vec3; JOINTS] {
        let pelvis = [0.0, -self.pelvis_drop, -self.pelvis_back];
        let up = [0.0, self.lean.cos(), self.lean.sin()];
        let chest = add(pelvis, scaled(up, 0.3));
        let neck = add(pelvis, scaled(up, 0.55));
        let head = add(pelvis, scaled(up, 0.72));
        let mut out = [[0.0; 3]; JOINTS];
        out[0] = pelvis;
        out[1] = chest;
        out[2] = neck;
        out[3] = head;
        for (arm, side) in [(0usize, 1.0), (1, -1.0)] {
            let shoulder = add(neck, [0.18 * side, -0.03, 0.0]);
            let [ue, ua, fe, fa] = self.arms[arm];
            let (elbow, wrist) = match self.wrists {
                Some(w) => {
                    let mid = scaled(add(shoulder, w[arm]), 0.5);
                    (add(mid, [0.05 * side, -0.08, 0.0]), w[arm])
                }
                None => {
                    let elbow = add(shoulder, scaled(limb(ue, ua, side), 0.28));
                    (elbow, add(elbow, scaled(limb(fe, fa, side), 0.25)))
                }
            };
            out[4 + 2 * arm] = elbow;
            out[5 + 2 * arm] = wrist;
        }
        for (leg, side) in [(0usize, 1.0), (1, -1.0)] {
            let hip = add(pelvis, [0.1 * side, 0.0, 0.0]);
            let [thigh, shank] = self.legs[leg];
            let knee = add(hip, scaled([0.0, -thigh.cos(), thigh.sin()], 0.42));
            let ankle = add(knee, scaled([0.0, -shank.cos(), shank.sin()], 0.4));
            out[8 + 2 * leg] = knee;
            out[9 + 2 * leg] = ankle;
        }
        out
    }
}

/// Pose of `class` at progress `p ∈ [0, 1]`.
fn program(class: ActionClass, p: f64, amp: f64, freq: f64) -> Pose {
    let mut pose = Pose::rest();
    let cycle = 2.0 * PI * freq * p;
    match class {
        ActionClass::ArmRaise => {
            let e = 0.15 + amp * 0.85 * PI * (PI * p).sin();
            pose.arms[1] = [e, 0.0, e, 0.0];
        }
        ActionClass::LegKick => {
            let f = amp * 1.2 * (PI * p).sin().powi(2);
            pose.legs[1] = [f, f * 0.4];
            pose.lean = -0.1 * f;
        }
        ActionClass::Clap => {
            // wrist gap peaks at (k + ½)/freq
            let gap = 0.03 + amp * 0.22 * (1.0 - cycle.cos()) / 2.0;
            let y = 0.45;
            pose.wrists = Some([[gap, y, 0.42], [-gap, y, 0.42]]);
        }
        ActionClass::SitDown => {
            let q = p * p * (3.0 - 2.0 * p);
            let f = amp * 1.4 * q;
            pose.pelvis_drop = amp * 0.35 * q;
            pose.pelvis_back = amp * 0.2 * q;
            pose.legs = [[f, 0.0], [f, 0.0]];
            pose.lean = 0.3 * q;
            pose.arms = [[0.15 + 0.8 * q, 1.2, 0.2 + 0.8 * q, 1.3]; 2];
        }
        ActionClass::Wave => {
            let fore = 2.6 + amp * 0.45 * cycle.sin();
            pose.arms[1] = [2.2, 0.2, fore, 0.0];
        }
    }
    pose
}

/// Generate one sample, deterministic in `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SkeletonSequence> {
    if spec.frames == 0 {
        return Err(Error::invalid("synthetic sample needs at least one frame"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) || !spec.amplitude.is_finite() {
        return Err(Error::invalid(format!(
            "noise {} and amplitude {} must be finite, noise non-negative",
            spec.noise, spec.amplitude
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (amp, shift, scale, heading, offset, sway) = if spec.jitter {
        (
            spec.amplitude * rng.random_range(0.85..1.15),
            rng.random_range(-0.04..0.04),
            rng.random_range(0.9..1.1),
            rng.random_range(-0.3..0.3),
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.2..0.2),
                rng.random_range(-1.0..1.0),
            ],
            rng.random_range(0.0..0.03),
        )
    } else {
        (spec.amplitude, 0.0, 1.0, 0.0, [0.0; 3], 0.0)
    };
    let noise = Normal::new(0.0, spec.noise).map_err(Error::invalid)?;
    let (sh, ch) = f64::sin_cos(heading);
    let t_total = spec.frames;
    let mut data = vec![0.0; JOINTS * t_total * 3];
    for t in 0..t_total {
        let base = if t_total == 1 {
            0.0
        } else {
            t as f64 / (t_total - 1) as f64
        };
        let p = (base + shift).clamp(0.0, 1.0);
        let mut pose = program(spec.class, p, amp, spec.frequency);
        pose.lean += sway * (2.0 * PI * base).sin();
        for (j, pos) in pose.joints().iter().enumerate() {
            let rotated = [ch * pos[0] + sh * pos[2], pos[1], -sh * pos[0] + ch * pos[2]];
            for c in 0..3 {
                let mut v = rotated[c] * scale + offset[c];
                if spec.noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data[(j * t_total + t) * 3 + c] = v as f32 as f64;
            }
        }
    }
    SkeletonSequence::new(SYNTHETIC_LAYOUT, JOINTS, t_total, 3, spec.label, data)
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Description of a generated dataset, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub schema_version: u32,
    /// Class names; the label of each is its position in this list.
    pub classes: Vec<String>,
    pub samples_per_class: usize,
    pub frames: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Fraction of each class held out for evaluation.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_eval_fraction() -> f64 {
    0.2
}

impl DatasetSpec {
    /// All library classes.
    pub fn standard(samples_per_class: usize, frames: usize, noise: f64) -> Self {
        DatasetSpec {
            schema_version: DATASET_SCHEMA_VERSION,
            classes: ActionClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            samples_per_class,
            frames,
            noise,
            amplitude: 1.0,
            eval_fraction: 0.2,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: DatasetSpec =
            toml::from_str(text).map_err(|e| Error::config(format!("dataset spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "dataset spec schema version {} is not {DATASET_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.classes.is_empty() || self.samples_per_class == 0 || self.frames == 0 {
            return Err(Error::config("dataset spec needs classes, samples and frames"));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::config(format!(
                "eval_fraction {} must lie in [0, 1)",
                self.eval_fraction
            )));
        }
        self.action_classes().map(|_| ())
    }

    pub fn action_classes(&self) -> Result<Vec<ActionClass>> {
        self.classes.iter().map(|c| c.parse()).collect()
    }

    /// Samples of each class assigned to training.
    pub fn train_per_class(&self) -> usize {
        let eval = (self.samples_per_class as f64 * self.eval_fraction).round() as usize;
        self.samples_per_class - eval.min(self.samples_per_class)
    }
}

/// Generate every sample of `spec`, class by class, with per-sample seeds
/// drawn in order from `seed`.
pub fn generate_dataset(
    spec: &DatasetSpec,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<(SkeletonSequence, Split)>> {
    spec.validate()?;
    let classes = spec.action_classes()?;
    let per_class = spec.samples_per_class;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..classes.len() * per_class).map(|_| master.next_u64()).collect();
    let train = spec.train_per_class();
    map_indexed(mode, seeds.len(), |i| {
        let (label, k) = (i / per_class, i % per_class);
        let mut s = SyntheticSpec::new(classes[label], spec.frames);
        s.label = label;
        s.noise = spec.noise;
        s.amplitude = spec.amplitude;
        let split = if k < train { Split::Train } else { Split::Eval };
        generate_synthetic(&s, seeds[i]).map(|seq| (seq, split))
    })
    .into_iter()
    .collect()
}
