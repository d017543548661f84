use std::path::{Path, PathBuf};

use serde::Deserialize;
use tiretwin_core::decision::DecisionConfig;
use tiretwin_core::reduce::{ReduceParams, ThresholdMode};
use tiretwin_core::synth::FleetConfig;
use tiretwin_core::tft::TftConfig;

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "TIRETWIN_OUT_DIR";

/// Whole-run configuration. Every section is optional; module defaults fill
/// whatever is left out. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every per-section seed when present.
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub reduce: ReduceSection,
    pub tft: TftConfig,
    pub update: UpdateSection,
    pub decision: DecisionConfig,
    pub io: IoSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Empty: a nominal fleet plus an under-inflated one.
    pub fleets: Vec<FleetConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    pub sigma: f64,
    pub radius: usize,
    pub include_rcp: bool,
    pub normalize: bool,
    pub target_count: Option<usize>,
    /// Takes precedence over `target_count`.
    pub theta: Option<f64>,
}

impl Default for ReduceSection {
    fn default() -> Self {
        let p = ReduceParams::default();
        ReduceSection {
            sigma: p.sigma,
            radius: p.radius,
            include_rcp: p.include_rcp,
            normalize: p.normalize,
            target_count: Some(200),
            theta: None,
        }
    }
}

impl ReduceSection {
    pub fn params(&self) -> ReduceParams {
        ReduceParams { sigma: self.sigma, radius: self.radius, include_rcp: self.include_rcp, normalize: self.normalize }
    }

    pub fn mode(&self) -> Result<ThresholdMode, CliError> {
        match (self.theta, self.target_count) {
            (Some(t), _) => Ok(ThresholdMode::Fixed(t)),
            (None, Some(n)) => Ok(ThresholdMode::Target(n)),
            (None, None) => Err(CliError::config("reduce needs theta or target_count")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateSection {
    /// Window stride over the new data.
    pub stride: usize,
    pub epochs: usize,
    /// Discrepancy-model learning rate; the base model's when unset.
    pub learning_rate: Option<f64>,
}

impl Default for UpdateSection {
    fn default() -> Self {
        UpdateSection { stride: 1, epochs: 30, learning_rate: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {}", e.message())))
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?;
                RunConfig::parse(&text)
            }
        }
    }

    /// Command-line seed first, then the config's.
    pub fn require_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.seed).ok_or_else(|| CliError::config("a seed is required: pass --seed or set seed in the config"))
    }

    /// Fleets to generate, with seeds derived from `seed`.
    pub fn fleets(&self, seed: u64) -> Vec<FleetConfig> {
        let mut fleets = if self.synth.fleets.is_empty() {
            vec![
                FleetConfig { fleet_id: "nominal".into(), n_tires: 100, ..FleetConfig::default() },
                FleetConfig {
                    fleet_id: "underinflated".into(),
                    n_tires: 100,
                    pressure_offset: -150.0,
                    ..FleetConfig::default()
                },
            ]
        } else {
            self.synth.fleets.clone()
        };
        for (i, f) in fleets.iter_mut().enumerate() {
            f.seed = seed.wrapping_add(i as u64);
        }
        fleets
    }

    /// Output directory: the environment variable, then `[io] out_dir`.
    pub fn out_dir(&self) -> Option<PathBuf> {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).or_else(|| self.io.out_dir.clone())
    }

    /// Relative output paths land in the output directory when one is set.
    pub fn out_path(&self, p: &Path) -> PathBuf {
        match self.out_dir() {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }
}
