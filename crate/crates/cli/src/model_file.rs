use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skipfree::{ChainSpec, GeoTail};

pub const SCHEMA_VERSION: u32 = 1;

fn default_version() -> u32 {
    SCHEMA_VERSION
}

/// On-disk description of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub h: f64,
    pub rate_up: f64,
    #[serde(default)]
    pub down: Vec<DownAtom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_tail: Option<TailSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownAtom {
    pub k: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSpec {
    pub k0: usize,
    pub c: f64,
    pub a: f64,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != SCHEMA_VERSION {
            bail!("unsupported model file version {} (expected {SCHEMA_VERSION})", file.version);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid model file {}", path.display()))
    }

    pub fn to_spec(&self) -> Result<ChainSpec> {
        let atoms = self.down.iter().map(|d| (d.k, d.rate)).collect();
        let tail = self.geo_tail.map(|t| GeoTail { k0: t.k0, c: t.c, a: t.a });
        Ok(ChainSpec::new(self.h, self.rate_up, atoms, tail)?)
    }

    pub fn from_spec(spec: &ChainSpec) -> Self {
        Self {
            version: SCHEMA_VERSION,
            h: spec.h(),
            rate_up: spec.rate_up(),
            down: spec.down_atoms().iter().map(|&(k, rate)| DownAtom { k, rate }).collect(),
            geo_tail: spec.geo_tail().map(|t| TailSpec { k0: t.k0, c: t.c, a: t.a }),
        }
    }
}

pub fn load_spec(path: &Path) -> Result<ChainSpec> {
    ModelFile::load(path)?
        .to_spec()
        .with_context(|| format!("invalid chain in {}", path.display()))
}
