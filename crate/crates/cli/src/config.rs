use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use okd_core::dosco::SyntheticDGSpec;
use okd_core::harness::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoscoConfig {
    pub k: usize,
    pub seed: u64,
    pub two_k: bool,
    pub l2_normalize: bool,
}

impl Default for DoscoConfig {
    fn default() -> Self {
        Self { k: 10, seed: 0, two_k: false, l2_normalize: false }
    }
}

/// The JSON config file. Every section is optional and every key unknown
/// to its section is rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub synth: SyntheticDGSpec,
    pub train: TrainConfig,
    pub dosco: DoscoConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// `a..b` (inclusive), a comma list, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b < a {
            bail!("empty seed range {s:?}");
        }
        return Ok((a..=b).collect());
    }
    let seeds = s.split(',').map(|p| p.trim().parse::<u64>()).collect::<Result<Vec<_>, _>>().with_context(|| format!("bad seed list {s:?}"))?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}
