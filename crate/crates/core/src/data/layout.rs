//! Skeleton layouts: joint connectivity and the body-part partition.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::PartitionMap;

pub const LAYOUT_SCHEMA_VERSION: u32 = 1;

const BUILTIN: &[(&str, &str)] = &[
    ("ntu-25", include_str!("../../layouts/ntu-25.toml")),
    ("nw-ucla-20", include_str!("../../layouts/nw-ucla-20.toml")),
    ("synthetic-12", include_str!("../../layouts/synthetic-12.toml")),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonLayout {
    pub schema_version: u32,
    pub id: String,
    pub joints: usize,
    /// Joint placed at the origin by normalization.
    pub center: usize,
    #[serde(default)]
    pub joint_names: Vec<String>,
    /// `[child, parent]` pairs forming a tree.
    pub bones: Vec<[usize; 2]>,
    pub parts: Vec<Vec<usize>>,
}

impl SkeletonLayout {
    pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(id, _)| *id)
    }

    pub fn builtin(id: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(name, _)| *name == id)
            .ok_or_else(|| Error::config(format!("unknown skeleton layout `{id}`")))?;
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let layout: SkeletonLayout =
            toml::from_str(text).map_err(|e| Error::config(format!("layout: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != LAYOUT_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "layout `{}` has schema version {}, expected {LAYOUT_SCHEMA_VERSION}",
                self.id, self.schema_version
            )));
        }
        let n = self.joints;
        if n == 0 || self.center >= n {
            return Err(Error::config(format!(
                "layout `{}` needs at least one joint and a center inside it",
                self.id
            )));
        }
        if !self.joint_names.is_empty() && self.joint_names.len() != n {
            return Err(Error::config(format!(
                "layout `{}` names {} of {n} joints",
                self.id,
                self.joint_names.len()
            )));
        }
        if self.bones.len() != n - 1 {
            return Err(Error::config(format!(
                "layout `{}` has {} bones, a tree over {n} joints has {}",
                self.id,
                self.bones.len(),
                n - 1
            )));
        }
        let mut parent = vec![None; n];
        for &[child, par] in &self.bones {
            if child >= n || par >= n || child == par {
                return Err(Error::config(format!(
                    "layout `{}` has invalid bone [{child}, {par}]",
                    self.id
                )));
            }
            if parent[child].replace(par).is_some() {
                return Err(Error::config(format!(
                    "layout `{}`: joint {child} has two parents",
                    self.id
                )));
            }
        }
        // n-1 distinct children leave one root; every chain must reach it
        for start in 0..n {
            let (mut j, mut steps) = (start, 0);
            while let Some(p) = parent[j] {
                j = p;
                steps += 1;
                if steps > n {
                    return Err(Error::config(format!("layout `{}` has a cycle", self.id)));
                }
            }
        }
        self.partition()?;
        Ok(())
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.bones
            .iter()
            .find(|[c, _]| *c == joint)
            .map(|&[_, p]| p)
    }

    /// `parents[j]`, `None` for the root.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.joints];
        for &[c, p] in &self.bones {
            out[c] = Some(p);
        }
        out
    }

    pub fn partition(&self) -> Result<PartitionMap> {
        PartitionMap::new(self.id.clone(), self.joints, self.parts.clone())
    }
}
