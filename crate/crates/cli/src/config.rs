//! The optional `--config` file. Every table is optional, and flags given on
//! the command line override its values.

use std::path::Path;

use anyhow::{Context, Result};
use bmf_fdr_core::{ExperimentSpec, PairCount, TrustConfig};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub trust: TrustConfig,
    pub generate: GenerateConfig,
    pub curve: CurveConfig,
    pub binarize: BinarizeConfig,
    pub eval: EvalConfig,
    /// Kept raw so a missing `[experiment.trust]` can fall back to `[trust]`.
    pub experiment: Option<toml::Table>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub r_star: Option<usize>,
    pub d: Option<f64>,
    pub p_plus: Option<f64>,
    pub p_minus: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub delta: Option<f64>,
    pub a_rel: Option<Vec<f64>>,
    pub pairs: Option<PairCount>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarizeConfig {
    pub positive_threshold: Option<f64>,
    pub min_row_degree: Option<usize>,
    pub min_col_degree: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub overlap: Option<f64>,
    pub bad_threshold: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The experiment table with the top-level trust settings filled in and
    /// the seed overridden when given.
    pub fn experiment_spec(&self, seed: Option<u64>) -> Result<ExperimentSpec> {
        let mut table = self
            .experiment
            .clone()
            .context("the config file has no [experiment] table")?;
        if !table.contains_key("trust") {
            table.insert("trust".into(), toml::Value::try_from(&self.trust)?);
        }
        if let Some(seed) = seed {
            let seed = i64::try_from(seed).context("seed must fit in a signed 64-bit integer")?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        if !table.contains_key("seed") {
            anyhow::bail!("experiment mode needs a seed: pass --seed or set experiment.seed");
        }
        let spec: ExperimentSpec = table.try_into()?;
        spec.validate()?;
        Ok(spec)
    }
}
