//! Run configuration: TOML config files, flag overrides, and the run
//! manifest that makes every invocation reproducible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statarb_core::backtest::{BacktestConfig, CostModel};
use statarb_core::market_data::MissingDataPolicy;
use statarb_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Price CSV (`date,ticker,adj_close`).
    pub prices: Option<PathBuf>,
    /// Universe CSV (`ticker,sector`).
    pub universe: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Recorded for reproducibility; drives synthetic-data generation only.
    pub seed: u64,
    /// Top holdings kept per sector when loading the universe.
    pub per_sector: usize,
    pub missing_policy: MissingDataPolicy,
    pub backtest: BacktestConfig,
    pub costs: CostModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prices: None,
            universe: None,
            out_dir: PathBuf::from("out"),
            seed: 42,
            per_sector: 5,
            missing_policy: MissingDataPolicy::Drop,
            backtest: BacktestConfig::default(),
            costs: CostModel::default(),
        }
    }
}

/// The manifest written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
}

impl RunConfig {
    /// Load a TOML config, or the config embedded in a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
                return Ok(manifest.config);
            }
            return serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::Config(format!("bad JSON config {}: {e}", path.display())));
        }
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn require_prices(&self) -> Result<&Path> {
        self.prices
            .as_deref()
            .ok_or_else(|| Error::Config("no price file configured (set `prices`)".into()))
    }

    pub fn require_universe(&self) -> Result<&Path> {
        self.universe
            .as_deref()
            .ok_or_else(|| Error::Config("no universe file configured (set `universe`)".into()))
    }
}
