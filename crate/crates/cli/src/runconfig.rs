//! Run configuration files and `--section.key value` overrides.
//!
//! A run config is a TOML document mirroring the experiment knobs: feeder
//! path, scenario and reward settings, training hyperparameters, seeds,
//! and output directory. Overrides are applied onto the parsed document
//! before deserialization, so they obey exactly the same schema checks.

use anyhow::{anyhow, bail, Context, Result};
use gridrestore_core::env::ScenarioConfig;
use gridrestore_core::happo::TrainConfig;
use gridrestore_core::reward::RewardConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunAlgorithm {
    Happo,
    IndependentPpo,
    Random,
    Greedy,
}

impl RunAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            RunAlgorithm::Happo => "happo",
            RunAlgorithm::IndependentPpo => "independent-ppo",
            RunAlgorithm::Random => "random",
            RunAlgorithm::Greedy => "greedy",
        }
    }
    pub fn is_learner(&self) -> bool {
        matches!(self, RunAlgorithm::Happo | RunAlgorithm::IndependentPpo)
    }
}

fn default_eval_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_benchmark_algorithms() -> Vec<RunAlgorithm> {
    vec![
        RunAlgorithm::Happo,
        RunAlgorithm::IndependentPpo,
        RunAlgorithm::Random,
        RunAlgorithm::Greedy,
    ]
}

/// Benchmark-only settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub algorithms: Vec<RunAlgorithm>,
    /// Canonical evaluation scenarios for the comparison table.
    pub scenario_seeds: Vec<u64>,
    /// Episodes per scenario for the stochastic baselines.
    pub random_episodes: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            algorithms: default_benchmark_algorithms(),
            scenario_seeds: default_eval_seeds(),
            random_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Feeder file, relative to the config file's directory.
    pub feeder: PathBuf,
    /// Output directory, relative to the working directory.
    pub out_dir: PathBuf,
    pub algorithm: RunAlgorithm,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Scenario seeds used by `eval` when none are given on the command
    /// line, and by baseline-algorithm runs.
    #[serde(default = "default_eval_seeds")]
    pub eval_scenario_seeds: Vec<u64>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

impl RunConfig {
    /// Parses the file, applies `--section.key value` overrides, resolves
    /// the feeder path against the config directory, and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let mut doc: toml::Table = text
            .parse()
            .with_context(|| format!("parsing run config {}", path.display()))?;
        apply_overrides(&mut doc, overrides)?;
        let mut config: RunConfig = toml::Value::Table(doc)
            .try_into()
            .with_context(|| format!("invalid run config {}", path.display()))?;

        if config.seeds.is_empty() {
            bail!("run config must list at least one seed");
        }
        let base = path.parent().unwrap_or(Path::new("."));
        if config.feeder.is_relative() {
            config.feeder = base.join(&config.feeder);
        }
        if !config.feeder.exists() {
            bail!("feeder file {} does not exist", config.feeder.display());
        }
        Ok(config)
    }

    /// Serializes the fully-resolved configuration (plus a version string)
    /// for exact reproduction of the run.
    pub fn resolved_dump(&self) -> String {
        let body = toml::to_string_pretty(self).expect("run config serializes");
        format!("# resolved by gridrestore {}\n{body}", env!("CARGO_PKG_VERSION"))
    }
}

/// Applies `--section.key value` pairs onto the TOML document. Values are
/// parsed as TOML literals, falling back to strings.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    if overrides.len() % 2 != 0 {
        bail!("overrides must come in `--section.key value` pairs");
    }
    for pair in overrides.chunks(2) {
        let key = pair[0]
            .strip_prefix("--")
            .ok_or_else(|| anyhow!("override key '{}' must start with --", pair[0]))?;
        let raw = &pair[1];
        let value = parse_toml_literal(raw);
        let parts: Vec<&str> = key.split('.').collect();
        let (last, init) = parts.split_last().expect("key is non-empty");
        let mut table = &mut *doc;
        for part in init {
            table = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("override '{key}' does not address a table"))?;
        }
        table.insert(last.to_string(), value);
    }
    Ok(())
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_supersedes_file_value() {
        let mut doc: toml::Table = r#"
            algorithm = "happo"
            [train]
            clip_eps = 0.2
        "#
        .parse()
        .unwrap();
        apply_overrides(
            &mut doc,
            &["--train.clip_eps".to_string(), "0.1".to_string()],
        )
        .unwrap();
        assert_eq!(doc["train"]["clip_eps"].as_float(), Some(0.1));
        apply_overrides(&mut doc, &["--algorithm".to_string(), "random".to_string()]).unwrap();
        assert_eq!(doc["algorithm"].as_str(), Some("random"));
    }

    #[test]
    fn dangling_override_is_rejected() {
        let mut doc: toml::Table = "x = 1".parse().unwrap();
        assert!(apply_overrides(&mut doc, &["--train.clip_eps".to_string()]).is_err());
    }
}
