use std::path::Path;

use fgstformer::data::StreamKind;
use fgstformer::model::Variant;
use fgstformer::temporal::TemporalKind;
use fgstformer::train::TrainRunConfig;
use fgstformer::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};

/// A model configuration and the run that trains it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainRunConfig,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let exp: Experiment = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        exp.model.validate()?;
        exp.train.validate()?;
        Ok(exp)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("experiment: {e}")))
    }

    pub fn apply_overrides(
        &mut self,
        variant: Option<&str>,
        temporal: Option<&str>,
        stages: Option<&str>,
    ) -> Result<()> {
        if let Some(v) = variant {
            v.parse::<Variant>()?.apply(&mut self.model.ablation);
        }
        if let Some(t) = temporal {
            self.model.ablation.temporal = t.parse::<TemporalKind>()?;
        }
        if let Some(s) = stages {
            let (a, b) = parse_stages(s)?;
            self.model = self.model.clone().with_stages(a, b)?;
        }
        self.model.validate()
    }
}

pub fn parse_stages(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--stages expects `L1,L2`, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn parse_streams(s: &str) -> Result<Vec<StreamKind>> {
    if s == "all" {
        return Ok(StreamKind::ALL.to_vec());
    }
    let mut out: Vec<StreamKind> = Vec::new();
    for part in s.split(',') {
        let k: StreamKind = part.trim().parse()?;
        if out.contains(&k) {
            return Err(Error::Config(format!("stream `{k}` listed twice")));
        }
        out.push(k);
    }
    Ok(out)
}
