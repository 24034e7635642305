use std::path::Path;

use crate::data::{
    derive_modality, normalize, read_manifest, read_sample, resample, SkeletonLayout,
    SkeletonSequence, Split,
};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// One preprocessed network input `[N, T, C]` with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

/// Inputs ready for a specific model configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    classes: usize,
    examples: Vec<Example>,
}

/// Resample to the model's frame count, center, then derive the model's
/// input stream.
pub fn preprocess(
    seq: &SkeletonSequence,
    layout: &SkeletonLayout,
    config: &ModelConfig,
) -> Result<Example> {
    if seq.layout_id() != config.layout {
        return Err(Error::LayoutMismatch(format!(
            "sample uses layout `{}`, model expects `{}`",
            seq.layout_id(),
            config.layout
        )));
    }
    if seq.channels() != config.in_channels {
        return Err(Error::LayoutMismatch(format!(
            "sample has {} coordinate channels, model expects {}",
            seq.channels(),
            config.in_channels
        )));
    }
    if seq.label() >= config.classes {
        return Err(Error::IndexOutOfRange {
            index: seq.label(),
            extent: config.classes,
        });
    }
    let seq = resample(seq, config.frames)?;
    let seq = normalize(&seq, layout)?;
    let seq = derive_modality(&seq, layout, config.stream)?;
    Ok(Example {
        input: seq.data().to_vec(),
        label: seq.label(),
    })
}

impl Dataset {
    pub fn new(config: &ModelConfig, examples: Vec<Example>) -> Result<Self> {
        let shape = [config.joints, config.frames, config.in_channels];
        let numel: usize = shape.iter().product();
        for (i, e) in examples.iter().enumerate() {
            if e.input.len() != numel || e.label >= config.classes {
                return Err(Error::invalid(format!(
                    "example {i} does not fit shape {shape:?} with {} classes",
                    config.classes
                )));
            }
        }
        Ok(Dataset {
            shape,
            classes: config.classes,
            examples,
        })
    }

    pub fn from_sequences<'a>(
        config: &ModelConfig,
        layout: &SkeletonLayout,
        seqs: impl IntoIterator<Item = &'a SkeletonSequence>,
    ) -> Result<Self> {
        let examples = seqs
            .into_iter()
            .map(|s| preprocess(s, layout, config))
            .collect::<Result<_>>()?;
        Dataset::new(config, examples)
    }

    /// Samples of `split` listed in a manifest.
    pub fn from_manifest(
        config: &ModelConfig,
        layout: &SkeletonLayout,
        manifest: &Path,
        split: Option<Split>,
    ) -> Result<Self> {
        let entries = read_manifest(manifest)?;
        let mut seqs = Vec::new();
        for e in entries.iter().filter(|e| split.is_none_or(|s| s == e.split)) {
            let seq = read_sample(&e.path)?;
            if seq.label() != e.label {
                return Err(Error::format(
                    "manifest",
                    format!(
                        "{} has label {} but the manifest says {}",
                        e.path.display(),
                        seq.label(),
                        e.label
                    ),
                ));
            }
            seqs.push(seq);
        }
        Dataset::from_sequences(config, layout, &seqs)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn input(&self, i: usize) -> Tensor {
        Tensor::new(self.examples[i].input.clone(), &self.shape).expect("validated in new")
    }

    pub fn label(&self, i: usize) -> usize {
        self.examples[i].label
    }
}
