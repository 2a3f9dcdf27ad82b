//! Experiment config files (JSON, one per run).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use newsalpha::bench::{AblationSpec, DEFAULT_COST_LEVELS_BP};
use newsalpha::extract::{EngineConfig, ExtractEngine, Extractor, HttpExtractor};
use newsalpha::extract::oracle::OracleExtractor;
use newsalpha::metrics::CompositeWeights;
use newsalpha::ppo::PPOConfig;
use newsalpha::promptopt::{GateThresholds, SelectionRule};
use newsalpha::time::DayRange;
use newsalpha::tradenv::FeatureMask;

pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Which completion client the extraction engine talks to.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorSpec {
    Oracle { noise_sigma: f64, seed: u64 },
    Http {
        endpoint: String,
        model: String,
        api_key_env: Option<String>,
    },
}

impl ExtractorSpec {
    pub fn build(&self) -> Box<dyn Extractor> {
        match self {
            ExtractorSpec::Oracle { noise_sigma, seed } => {
                Box::new(OracleExtractor::new(*noise_sigma, *seed))
            }
            ExtractorSpec::Http {
                endpoint,
                model,
                api_key_env,
            } => Box::new(HttpExtractor::new(
                endpoint.clone(),
                model.clone(),
                api_key_env.clone(),
            )),
        }
    }

    pub fn engine(&self, jobs: usize, cache_path: Option<PathBuf>) -> Result<ExtractEngine> {
        let config = EngineConfig {
            jobs,
            cache_path,
            ..EngineConfig::default()
        };
        Ok(ExtractEngine::new(self.build(), config)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractRunConfig {
    pub store_dir: PathBuf,
    pub market_path: PathBuf,
    pub template_path: PathBuf,
    pub window: DayRange,
    /// Defaults to the market's whole universe.
    pub universe: Option<Vec<String>>,
    pub extractor: ExtractorSpec,
    /// Write the extraction cache beside the store.
    #[serde(default = "default_true")]
    pub cache: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeRunConfig {
    pub store_dir: PathBuf,
    pub market_path: PathBuf,
    pub baseline_template: PathBuf,
    /// Directory of mutation templates for the scripted proposer…
    pub mutations_dir: Option<PathBuf>,
    /// …or a remote proposer endpoint.
    pub proposer_endpoint: Option<String>,
    pub proposer_api_key_env: Option<String>,
    pub optimization_window: DayRange,
    pub oos_window: DayRange,
    pub universe: Option<Vec<String>>,
    pub extractor: ExtractorSpec,
    #[serde(default)]
    pub thresholds: GateThresholds,
    #[serde(default)]
    pub weights: CompositeWeights,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_horizon")]
    pub horizon_days: usize,
    #[serde(default = "default_min_names")]
    pub min_names: usize,
    #[serde(default = "default_selection")]
    pub selection: SelectionRule,
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Also validate the frozen candidate out-of-sample.
    #[serde(default = "default_true")]
    pub validate_oos: bool,
}

fn default_max_rounds() -> u32 {
    5
}

fn default_horizon() -> usize {
    newsalpha::metrics::DEFAULT_HORIZON
}

fn default_min_names() -> usize {
    newsalpha::metrics::DEFAULT_MIN_NAMES
}

fn default_selection() -> SelectionRule {
    SelectionRule::MaxComposite
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub market_path: PathBuf,
    pub panel_path: PathBuf,
    pub universe: Option<Vec<String>>,
    pub feature_mask: FeatureMask,
    pub train_range: DayRange,
    pub eval_range: DayRange,
    #[serde(default = "default_cash")]
    pub initial_cash: f64,
    #[serde(default = "default_cost_bp")]
    pub cost_bp: f64,
    #[serde(default = "default_lot")]
    pub trade_lot: u32,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    #[serde(default)]
    pub ppo: PPOConfig,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_cash() -> f64 {
    100_000.0
}

pub fn default_cost_bp() -> f64 {
    10.0
}

pub fn default_lot() -> u32 {
    10
}

pub fn default_reward_scale() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateRunConfig {
    pub market_path: PathBuf,
    pub panel_path: PathBuf,
    pub spec: AblationSpec,
    #[serde(default)]
    pub ppo: PPOConfig,
    /// VIX threshold for the regime split emitted with the results.
    #[serde(default = "default_vix_threshold")]
    pub vix_threshold: f64,
}

pub fn default_vix_threshold() -> f64 {
    newsalpha::bench::DEFAULT_VIX_THRESHOLD
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSweepPolicyRef {
    pub label: String,
    pub checkpoint_path: PathBuf,
    pub feature_mask: FeatureMask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSweepRunConfig {
    pub market_path: PathBuf,
    pub panel_path: PathBuf,
    pub policies: Vec<CostSweepPolicyRef>,
    pub episode: DayRange,
    pub universe: Option<Vec<String>>,
    #[serde(default = "default_levels")]
    pub levels_bp: Vec<f64>,
    #[serde(default = "default_cash")]
    pub initial_cash: f64,
    #[serde(default = "default_lot")]
    pub trade_lot: u32,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
}

fn default_levels() -> Vec<f64> {
    DEFAULT_COST_LEVELS_BP.to_vec()
}
