//! TOML configuration: partial `[rl]` / `[scorer]` / `[farm]` / `[server]`
//! sections folded onto the library defaults.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use lurepot_core::farm::{DeviceFarm, DeviceProfile, FarmError};
use lurepot_core::rl::RlParams;
use lurepot_core::scorer::ScorerConfig;
use lurepot_core::synth;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub rl: RlSection,
    pub scorer: ScorerSection,
    pub farm: FarmSection,
    pub server: ServerSection,
}

/// Fully resolved settings used by the commands.
#[derive(Debug, Clone)]
pub struct Config {
    pub rl: RlParams,
    pub scorer: ScorerConfig,
    pub farm: FarmSection,
    pub server: ServerSection,
}

/// Every key optional so a config file may override just what it needs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlSection {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub epsilon_decay: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub threshold: Option<f64>,
    pub prune_threshold: Option<f64>,
    pub prune_min_visits: Option<u64>,
    pub exploit_bonus: Option<f64>,
    pub exploit_bonus_enabled: Option<bool>,
}

impl RlSection {
    pub fn apply(&self, base: RlParams) -> RlParams {
        RlParams {
            alpha: self.alpha.unwrap_or(base.alpha),
            gamma: self.gamma.unwrap_or(base.gamma),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            epsilon_decay: self.epsilon_decay.unwrap_or(base.epsilon_decay),
            epsilon_min: self.epsilon_min.unwrap_or(base.epsilon_min),
            threshold: self.threshold.unwrap_or(base.threshold),
            prune_threshold: self.prune_threshold.unwrap_or(base.prune_threshold),
            prune_min_visits: self.prune_min_visits.unwrap_or(base.prune_min_visits),
            exploit_bonus: self.exploit_bonus.unwrap_or(base.exploit_bonus),
            exploit_bonus_enabled: self
                .exploit_bonus_enabled
                .unwrap_or(base.exploit_bonus_enabled),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    pub temperature: Option<f64>,
    pub top_k: Option<usize>,
}

impl ScorerSection {
    pub fn apply(&self, base: ScorerConfig) -> ScorerConfig {
        ScorerConfig {
            temperature: self.temperature.unwrap_or(base.temperature),
            top_k: self.top_k.unwrap_or(base.top_k),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FarmSection {
    pub timeout_ms: u64,
    /// Device profiles; both lists empty selects the built-in farm.
    pub local: Vec<DeviceProfile>,
    pub internet: Vec<DeviceProfile>,
}

impl Default for FarmSection {
    fn default() -> Self {
        FarmSection {
            timeout_ms: 100,
            local: Vec::new(),
            internet: Vec::new(),
        }
    }
}

impl FarmSection {
    pub fn build(&self) -> Result<DeviceFarm, FarmError> {
        if self.local.is_empty() && self.internet.is_empty() {
            return Ok(synth::farm());
        }
        DeviceFarm::new(self.local.clone(), self.internet.clone(), self.timeout_ms)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub idle_timeout_secs: u64,
    pub sweep_interval_ms: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            bind: "127.0.0.1:8080".to_string(),
            idle_timeout_secs: 30,
            sweep_interval_ms: 250,
        }
    }
}

/// Load and resolve the config; a missing `--config` means pure defaults.
pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
    let file = match path {
        None => ConfigFile::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", p.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
        }
    };
    let rl = file.rl.apply(RlParams::default());
    rl.validate()
        .map_err(|e| CliError::Usage(format!("config rl section: {e}")))?;
    let scorer = file.scorer.apply(ScorerConfig::default());
    if scorer.temperature <= 0.0 || scorer.temperature.is_nan() {
        return Err(CliError::Usage(format!(
            "config scorer section: temperature {} must be > 0",
            scorer.temperature
        )));
    }
    if scorer.top_k == 0 {
        return Err(CliError::Usage(
            "config scorer section: top_k must be >= 1".to_string(),
        ));
    }
    if file.server.idle_timeout_secs == 0 {
        return Err(CliError::Usage(
            "config server section: idle_timeout_secs must be >= 1".to_string(),
        ));
    }
    Ok(Config {
        rl,
        scorer,
        farm: file.farm,
        server: file.server,
    })
}
