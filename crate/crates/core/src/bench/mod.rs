//! Experiment harness: performance statistics, the four-mask multi-seed
//! ablation, regime splits, cost sweeps, buy-and-hold, and report CSVs.

pub mod stats;

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::FeaturePanel;
use crate::ppo::{evaluate_policy, train, PpoError};
use crate::synthmarket::MarketData;
use crate::time::DayRange;
use crate::tradenv::{EnvConfig, EnvError, FeatureMask, ObsNormalizer, TradingEnv};

pub use stats::{ln_gamma, reg_inc_beta, student_t_two_sided_p};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 42];
pub const DEFAULT_COST_LEVELS_BP: [f64; 5] = [0.0, 5.0, 10.0, 20.0, 50.0];
pub const DEFAULT_VIX_THRESHOLD: f64 = 20.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("Sharpe undefined: zero return dispersion")]
    SharpeUndefined,
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("paired differences are degenerate (zero variance)")]
    DegenerateDiffs,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("regime {regime} has {days} day(s), need at least 2")]
    EmptyRegime { regime: String, days: usize },
    #[error("invalid range: {0}")]
    Range(String),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Annualized Sharpe: mean / sample std * sqrt(252), zero risk-free rate.
pub fn sharpe(daily_returns: &[f64]) -> Result<f64, BenchError> {
    if daily_returns.len() < 2 {
        return Err(BenchError::TooFew {
            need: 2,
            got: daily_returns.len(),
        });
    }
    let n = daily_returns.len() as f64;
    let mean = daily_returns.iter().sum::<f64>() / n;
    if daily_returns.iter().all(|r| *r == daily_returns[0]) {
        return Err(BenchError::SharpeUndefined);
    }
    let var = daily_returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(BenchError::SharpeUndefined);
    }
    Ok(mean / std * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Max over t of (peak - V_t) / peak, as a fraction in [0, 1].
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        if peak > 0.0 {
            worst = worst.max((peak - v) / peak);
        }
    }
    worst
}

/// Simple daily returns of an equity curve.
pub fn daily_returns(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub t_stat: f64,
    pub df: usize,
    /// Two-sided, from the Student-t CDF.
    pub p_value: f64,
    pub mean_diff: f64,
}

/// Paired t-test on per-seed metrics aligned by position.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedTestResult, BenchError> {
    if a.len() != b.len() {
        return Err(BenchError::LengthMismatch(format!(
            "{} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(BenchError::TooFew { need: 2, got: a.len() });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    if diffs.iter().all(|d| *d == diffs[0]) {
        return Err(BenchError::DegenerateDiffs);
    }
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(BenchError::DegenerateDiffs);
    }
    let t_stat = mean / (std / n.sqrt());
    let df = diffs.len() - 1;
    Ok(PairedTestResult {
        t_stat,
        df,
        p_value: student_t_two_sided_p(t_stat, df),
        mean_diff: mean,
    })
}

/// Invest everything at the first close in `range`, hold to the end.
/// Curve has one point per trading day in the range.
pub fn buy_and_hold(
    market: &MarketData,
    ticker: &str,
    range: &DayRange,
    initial_cash: f64,
) -> Result<Vec<(NaiveDate, f64)>, BenchError> {
    let col = market
        .ticker_index(ticker)
        .ok_or_else(|| BenchError::UnknownTicker(ticker.to_string()))?;
    let days = market.day_indices(range);
    if days.is_empty() {
        return Err(BenchError::Range(format!("no trading days in {range:?}")));
    }
    let first_close = market.close(days[0], col);
    Ok(days
        .iter()
        .map(|&d| {
            (
                market.calendar.day(d).expect("day in calendar"),
                initial_cash * market.close(d, col) / first_close,
            )
        })
        .collect())
}

/// One (config, seed, range) evaluation row. `error` marks failed cells so
/// partial ablations still persist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config_label: String,
    pub seed: u64,
    pub range_label: String,
    pub sharpe: Option<f64>,
    pub total_return_pct: f64,
    pub max_drawdown_pct: f64,
    pub equity: Vec<(NaiveDate, f64)>,
    pub error: Option<String>,
}

impl RunResult {
    fn from_curve(
        config_label: &str,
        seed: u64,
        range_label: &str,
        equity: Vec<(NaiveDate, f64)>,
    ) -> Self {
        let values: Vec<f64> = equity.iter().map(|(_, v)| *v).collect();
        let rets = daily_returns(&values);
        Self {
            config_label: config_label.to_string(),
            seed,
            range_label: range_label.to_string(),
            sharpe: sharpe(&rets).ok(),
            total_return_pct: (values[values.len() - 1] / values[0] - 1.0) * 100.0,
            max_drawdown_pct: max_drawdown(&values) * 100.0,
            equity,
            error: None,
        }
    }
}

/// Environment template shared by every ablation cell; the mask and episode
/// range vary per cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvTemplate {
    pub universe: Vec<String>,
    pub initial_cash: f64,
    pub cost_bp: f64,
    pub trade_lot: u32,
    pub reward_scale: f64,
}

impl EnvTemplate {
    pub fn to_env_config(&self, mask: FeatureMask, episode: DayRange) -> EnvConfig {
        EnvConfig {
            universe: self.universe.clone(),
            initial_cash: self.initial_cash,
            cost_bp: self.cost_bp,
            trade_lot: self.trade_lot,
            feature_mask: mask,
            reward_scale: self.reward_scale,
            episode,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSpec {
    pub configs: Vec<FeatureMask>,
    pub seeds: Vec<u64>,
    pub train_range: DayRange,
    pub validation_range: DayRange,
    pub test_range: DayRange,
    pub env: EnvTemplate,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.configs.is_empty() || self.seeds.is_empty() {
            return Err(BenchError::Range("configs and seeds must be non-empty".to_string()));
        }
        let ranges = [&self.train_range, &self.validation_range, &self.test_range];
        for (i, a) in ranges.iter().enumerate() {
            for b in ranges.iter().skip(i + 1) {
                if a.overlaps(b) {
                    return Err(BenchError::Range(format!("{a:?} overlaps {b:?}")));
                }
            }
        }
        if !(self.train_range.end < self.validation_range.start
            && self.validation_range.end < self.test_range.start)
        {
            return Err(BenchError::Range(
                "ranges must be ordered train < validation < test".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummaryRow {
    pub config: String,
    pub range: String,
    /// Runs with a defined Sharpe.
    pub n: usize,
    pub sharpe_mean: f64,
    pub sharpe_std: f64,
    pub return_mean_pct: f64,
    pub return_std_pct: f64,
    pub maxdd_mean_pct: f64,
    pub maxdd_std_pct: f64,
    pub delta_sharpe_vs_baseline: Option<f64>,
    pub paired_t_vs_baseline: Option<PairedTestResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResults {
    pub runs: Vec<RunResult>,
    pub summary: Vec<AblationSummaryRow>,
}

impl AblationResults {
    /// `config,seed,range,sharpe,return_pct,maxdd_pct` rows, stable order.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("config,seed,range,sharpe,return_pct,maxdd_pct\n");
        for r in &self.runs {
            let sharpe = r.sharpe.map(|s| format!("{s:.9}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{sharpe},{:.9},{:.9}\n",
                r.config_label, r.seed, r.range_label, r.total_return_pct, r.max_drawdown_pct
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Train every (config, seed) cell on the train range and evaluate the
/// frozen policy on the validation and test ranges. Deterministic given the
/// seed list; failed cells become error-marked rows instead of aborting.
pub fn run_ablation(
    spec: &AblationSpec,
    market: &Arc<MarketData>,
    panel: &Arc<FeaturePanel>,
    ppo_config: &crate::ppo::PPOConfig,
) -> Result<AblationResults, BenchError> {
    spec.validate()?;
    let mut runs = Vec::new();
    for mask in &spec.configs {
        for &seed in &spec.seeds {
            match run_cell(spec, market, panel, ppo_config, *mask, seed) {
                Ok(mut cell_runs) => runs.append(&mut cell_runs),
                Err(e) => {
                    for range_label in ["validation", "test"] {
                        runs.push(RunResult {
                            config_label: mask.as_str().to_string(),
                            seed,
                            range_label: range_label.to_string(),
                            sharpe: None,
                            total_return_pct: 0.0,
                            max_drawdown_pct: 0.0,
                            equity: Vec::new(),
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
    }
    let summary = summarize(spec, &runs);
    Ok(AblationResults { runs, summary })
}

fn run_cell(
    spec: &AblationSpec,
    market: &Arc<MarketData>,
    panel: &Arc<FeaturePanel>,
    ppo_config: &crate::ppo::PPOConfig,
    mask: FeatureMask,
    seed: u64,
) -> Result<Vec<RunResult>, BenchError> {
    let mut train_env = TradingEnv::new(
        spec.env.to_env_config(mask, spec.train_range),
        market.clone(),
        panel.clone(),
    )?;
    let mut validation_env = TradingEnv::new(
        spec.env.to_env_config(mask, spec.validation_range),
        market.clone(),
        panel.clone(),
    )?;
    let mut norm = ObsNormalizer::new(train_env.obs_width());
    let output = train(&mut train_env, &mut validation_env, &mut norm, ppo_config, seed)?;

    let label = mask.as_str();
    let mut results = Vec::with_capacity(2);
    for (range_label, range) in [
        ("validation", spec.validation_range),
        ("test", spec.test_range),
    ] {
        let mut env = TradingEnv::new(
            spec.env.to_env_config(mask, range),
            market.clone(),
            panel.clone(),
        )?;
        let curve = evaluate_policy(&output.params, &output.normalizer, &mut env, true, seed)?;
        results.push(RunResult::from_curve(label, seed, range_label, curve));
    }
    Ok(results)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(spec: &AblationSpec, runs: &[RunResult]) -> Vec<AblationSummaryRow> {
    let mut summary = Vec::new();
    for range in ["validation", "test"] {
        // Baseline Sharpe per seed for pairing.
        let baseline: Vec<(u64, f64)> = runs
            .iter()
            .filter(|r| r.config_label == "baseline" && r.range_label == range)
            .filter_map(|r| r.sharpe.map(|s| (r.seed, s)))
            .collect();
        let (baseline_mean, _) = mean_std(&baseline.iter().map(|(_, s)| *s).collect::<Vec<_>>());
        for mask in &spec.configs {
            let label = mask.as_str();
            let rows: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.config_label == label && r.range_label == range && r.error.is_none())
                .collect();
            if rows.is_empty() {
                continue;
            }
            let sharpes: Vec<f64> = rows.iter().filter_map(|r| r.sharpe).collect();
            let (sharpe_mean, sharpe_std) = mean_std(&sharpes);
            let (return_mean_pct, return_std_pct) =
                mean_std(&rows.iter().map(|r| r.total_return_pct).collect::<Vec<_>>());
            let (maxdd_mean_pct, maxdd_std_pct) =
                mean_std(&rows.iter().map(|r| r.max_drawdown_pct).collect::<Vec<_>>());
            let is_baseline = label == "baseline";
            // Pair by seed against the baseline.
            let paired: (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| {
                    let s = r.sharpe?;
                    let b = baseline.iter().find(|(seed, _)| *seed == r.seed)?.1;
                    Some((s, b))
                })
                .unzip();
            summary.push(AblationSummaryRow {
                config: label.to_string(),
                range: range.to_string(),
                n: sharpes.len(),
                sharpe_mean,
                sharpe_std,
                return_mean_pct,
                return_std_pct,
                maxdd_mean_pct,
                maxdd_std_pct,
                delta_sharpe_vs_baseline: (!is_baseline && !baseline.is_empty())
                    .then(|| sharpe_mean - baseline_mean),
                paired_t_vs_baseline: if is_baseline {
                    None
                } else {
                    paired_t(&paired.0, &paired.1).ok()
                },
            });
        }
    }
    summary
}

/// Per-regime daily-return statistics for one labeled equity curve set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeRow {
    pub config: String,
    pub regime: String,
    pub n_days: usize,
    pub mean_daily_return: Option<f64>,
    pub std_daily_return: Option<f64>,
    pub sharpe: Option<f64>,
}

/// Split each curve's daily returns at the VIX threshold (high-vol when
/// vix >= threshold) and report per-regime stats. Every return day falls in
/// exactly one regime; regimes with under 2 days carry counts but no stats.
pub fn regime_split(
    curves: &[(String, Vec<(NaiveDate, f64)>)],
    vix: &[(NaiveDate, f64)],
    threshold: f64,
) -> Result<Vec<RegimeRow>, BenchError> {
    let lookup: std::collections::HashMap<NaiveDate, f64> = vix.iter().copied().collect();
    let mut rows = Vec::new();
    for (label, curve) in curves {
        let mut high = Vec::new();
        let mut low = Vec::new();
        for w in curve.windows(2) {
            let (date, v1) = w[1];
            let v0 = w[0].1;
            let vix_level = lookup
                .get(&date)
                .ok_or_else(|| BenchError::Range(format!("no vix for {date}")))?;
            let ret = v1 / v0 - 1.0;
            if *vix_level >= threshold {
                high.push(ret);
            } else {
                low.push(ret);
            }
        }
        debug_assert_eq!(high.len() + low.len(), curve.len().saturating_sub(1));
        for (regime, returns) in [("high_vol", high), ("low_vol", low)] {
            let (mean, std) = mean_std(&returns);
            let enough = returns.len() >= 2;
            rows.push(RegimeRow {
                config: label.clone(),
                regime: regime.to_string(),
                n_days: returns.len(),
                mean_daily_return: enough.then_some(mean),
                std_daily_return: enough.then_some(std),
                sharpe: if enough { sharpe(&returns).ok() } else { None },
            });
        }
    }
    Ok(rows)
}

/// Per-regime stats, erroring on regimes with fewer than 2 days.
pub fn regime_stats(returns: &[f64], regime: &str) -> Result<(f64, f64), BenchError> {
    if returns.len() < 2 {
        return Err(BenchError::EmptyRegime {
            regime: regime.to_string(),
            days: returns.len(),
        });
    }
    Ok(mean_std(returns))
}

/// A frozen policy to sweep: parameters, normalizer stats, and its
/// environment template (whose cost level gets overridden per row).
pub struct CostSweepPolicy {
    pub label: String,
    pub params: crate::ppo::PolicyParams,
    pub normalizer: ObsNormalizer,
    pub env: EnvConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSweepCell {
    pub label: String,
    pub sharpe: Option<f64>,
    pub final_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSweepRow {
    pub cost_bp: f64,
    pub cells: Vec<CostSweepCell>,
    /// Second policy Sharpe minus first, when exactly two are swept.
    pub delta_sharpe: Option<f64>,
}

/// Evaluate the same frozen policies (deterministic actions) at each cost
/// level.
pub fn cost_sweep(
    policies: &[CostSweepPolicy],
    levels: &[f64],
    market: &Arc<MarketData>,
    panel: &Arc<FeaturePanel>,
) -> Result<Vec<CostSweepRow>, BenchError> {
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Range(
            "cost levels must be sorted ascending and distinct".to_string(),
        ));
    }
    let mut rows = Vec::new();
    for &cost_bp in levels {
        let mut cells = Vec::new();
        for policy in policies {
            let mut env_config = policy.env.clone();
            env_config.cost_bp = cost_bp;
            let mut env = TradingEnv::new(env_config, market.clone(), panel.clone())?;
            let curve = evaluate_policy(&policy.params, &policy.normalizer, &mut env, true, 0)?;
            let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
            cells.push(CostSweepCell {
                label: policy.label.clone(),
                sharpe: sharpe(&daily_returns(&values)).ok(),
                final_value: values[values.len() - 1],
            });
        }
        let delta_sharpe = match cells.as_slice() {
            [a, b] => a.sharpe.zip(b.sharpe).map(|(sa, sb)| sb - sa),
            _ => None,
        };
        rows.push(CostSweepRow {
            cost_bp,
            cells,
            delta_sharpe,
        });
    }
    Ok(rows)
}

/// Long-format equity CSV: config,seed,date,value.
pub fn export_equity_csv(runs: &[RunResult], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("config,seed,range,date,value\n");
    for r in runs {
        for (date, value) in &r.equity {
            out.push_str(&format!(
                "{},{},{},{date},{value:.9}\n",
                r.config_label, r.seed, r.range_label
            ));
        }
    }
    crate::fsio::write_atomic_str(path, &out)
}

/// Regime table CSV: config,regime,n_days,mean,std,sharpe.
pub fn export_regime_csv(rows: &[RegimeRow], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("config,regime,n_days,mean_daily_return,std_daily_return,sharpe\n");
    for r in rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.config,
            r.regime,
            r.n_days,
            fmt(r.mean_daily_return),
            fmt(r.std_daily_return),
            fmt(r.sharpe)
        ));
    }
    crate::fsio::write_atomic_str(path, &out)
}

/// Cost sweep CSV: cost_bp, then sharpe/final value per policy, then delta.
pub fn export_cost_sweep_csv(rows: &[CostSweepRow], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("cost_bp");
    if let Some(first) = rows.first() {
        for cell in &first.cells {
            out.push_str(&format!(",{}_sharpe,{}_final_value", cell.label, cell.label));
        }
    }
    out.push_str(",delta_sharpe\n");
    for row in rows {
        out.push_str(&format!("{}", row.cost_bp));
        for cell in &row.cells {
            let s = cell.sharpe.map(|s| format!("{s:.9}")).unwrap_or_default();
            out.push_str(&format!(",{s},{:.9}", cell.final_value));
        }
        let d = row.delta_sharpe.map(|d| format!("{d:.9}")).unwrap_or_default();
        out.push_str(&format!(",{d}\n"));
    }
    crate::fsio::write_atomic_str(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::StockFeatures;
    use crate::ppo::{PPOConfig, PolicyParams, PolicyShape};
    use crate::synthmarket::{generate_market, SynthConfig};

    #[test]
    fn sharpe_worked_examples() {
        // Alternating +-1%: zero mean.
        let alternating: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        assert_eq!(sharpe(&alternating).unwrap(), 0.0);
        // Sample mean 0.001, sample std 0.01 -> 0.1 * sqrt(252).
        let s = sharpe(&[-0.009, 0.001, 0.011]).unwrap();
        assert!((s - 0.1 * 252.0f64.sqrt()).abs() < 1e-12, "s = {s}");
        assert!((s - 1.5875).abs() < 1e-4);
        // Constant returns: undefined.
        assert!(matches!(sharpe(&[0.01, 0.01, 0.01]), Err(BenchError::SharpeUndefined)));
        assert!(matches!(sharpe(&[0.01]), Err(BenchError::TooFew { .. })));
    }

    #[test]
    fn sharpe_is_scale_invariant() {
        use rand::Rng;
        let mut rng = crate::rng::stream(14, "sharpe_scale", 0);
        for _ in 0..100 {
            let returns: Vec<f64> = (0..30).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let scaled: Vec<f64> = returns.iter().map(|r| r * 3.7).collect();
            if let (Ok(a), Ok(b)) = (sharpe(&returns), sharpe(&scaled)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn drawdown_worked_examples() {
        assert!((max_drawdown(&[100.0, 120.0, 90.0, 110.0]) - 0.25).abs() < 1e-12);
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(max_drawdown(&[42.0]), 0.0);
        // Invariant under uniform scaling.
        let curve = [100.0, 130.0, 80.0, 95.0, 140.0, 70.0];
        let scaled: Vec<f64> = curve.iter().map(|v| v * 11.0).collect();
        assert!((max_drawdown(&curve) - max_drawdown(&scaled)).abs() < 1e-12);
    }

    #[test]
    fn paired_t_worked_example() {
        // Diffs [0.1, 0.3, 0.2, 0.0, 0.4]: t = 2sqrt(2), p = I_{1/3}(2, 1/2).
        let a = [0.1, 0.3, 0.2, 0.0, 0.4];
        let b = [0.0; 5];
        let result = paired_t(&a, &b).unwrap();
        assert!((result.t_stat - 2.0 * 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(result.df, 4);
        assert!((result.p_value - 0.04742066).abs() < 1e-6, "p = {}", result.p_value);
        assert!((result.mean_diff - 0.2).abs() < 1e-12);
    }

    #[test]
    fn paired_t_rejects_degenerate_and_is_antisymmetric() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(paired_t(&a, &a), Err(BenchError::DegenerateDiffs)));
        let b = [0.9, 2.2, 2.8];
        let ab = paired_t(&a, &b).unwrap();
        let ba = paired_t(&b, &a).unwrap();
        assert!((ab.t_stat + ba.t_stat).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
    }

    fn flat_panel(market: &MarketData) -> Arc<FeaturePanel> {
        Arc::new(FeaturePanel {
            dates: market.calendar.days().to_vec(),
            tickers: market.tickers.clone(),
            stock: vec![vec![StockFeatures::zero(); market.n_tickers()]; market.n_days()],
            macros: market.macro_series.clone(),
        })
    }

    #[test]
    fn buy_and_hold_worked_examples() {
        let mut market = generate_market(&SynthConfig {
            n_tickers: 1,
            n_days: 10,
            event_rate: 0.0,
            seed: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        for d in 0..10 {
            market.ohlcv[d][0].close = 100.0 + 100.0 * d as f64 / 9.0;
        }
        let days = market.calendar.days();
        let range = DayRange::new(days[0], days[9]).unwrap();
        let curve = buy_and_hold(&market, "SYN00", &range, 1_000.0).unwrap();
        assert_eq!(curve.len(), 10);
        // Price doubles: 100% total return.
        assert!((curve[9].1 / curve[0].1 - 2.0).abs() < 1e-12);
        assert!(buy_and_hold(&market, "NOPE", &range, 1.0).is_err());
        // Flat prices: zero return, Sharpe undefined.
        for d in 0..10 {
            market.ohlcv[d][0].close = 50.0;
        }
        let curve = buy_and_hold(&market, "SYN00", &range, 1_000.0).unwrap();
        let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
        assert_eq!(values[9], 1_000.0);
        assert!(matches!(sharpe(&daily_returns(&values)), Err(BenchError::SharpeUndefined)));
    }

    fn tiny_spec(market: &MarketData) -> AblationSpec {
        let days = market.calendar.days();
        AblationSpec {
            configs: vec![FeatureMask::Baseline, FeatureMask::Full],
            seeds: vec![0, 1],
            train_range: DayRange::new(days[35], days[80]).unwrap(),
            validation_range: DayRange::new(days[81], days[100]).unwrap(),
            test_range: DayRange::new(days[101], days[119]).unwrap(),
            env: EnvTemplate {
                universe: market.tickers.clone(),
                initial_cash: 10_000.0,
                cost_bp: 10.0,
                trade_lot: 10,
                reward_scale: 1e-3,
            },
        }
    }

    #[test]
    fn ablation_spec_validation() {
        let market = generate_market(&SynthConfig {
            n_tickers: 2,
            n_days: 120,
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let good = tiny_spec(&market);
        assert!(good.validate().is_ok());
        let mut overlapping = good.clone();
        overlapping.validation_range = good.train_range;
        assert!(overlapping.validate().is_err());
        let mut reordered = good.clone();
        std::mem::swap(&mut reordered.validation_range, &mut reordered.test_range);
        assert!(reordered.validate().is_err());
    }

    #[test]
    fn ablation_counts_and_determinism() {
        let market = Arc::new(
            generate_market(&SynthConfig {
                n_tickers: 2,
                n_days: 120,
                seed: 2,
                event_rate: 0.0,
                ..SynthConfig::default()
            })
            .unwrap(),
        );
        let panel = flat_panel(&market);
        let spec = tiny_spec(&market);
        let ppo = PPOConfig {
            total_timesteps: 512,
            rollout_horizon: 128,
            epochs_per_update: 2,
            checkpoint_every: 256,
            hidden: 8,
            ..PPOConfig::default()
        };
        let a = run_ablation(&spec, &market, &panel, &ppo).unwrap();
        // 2 configs x 2 seeds x 2 ranges.
        assert_eq!(a.runs.len(), 8);
        assert!(a.runs.iter().all(|r| r.error.is_none()));
        // Paired rows pair identical seeds only; baseline rows carry no test.
        for row in &a.summary {
            if row.config == "baseline" {
                assert!(row.paired_t_vs_baseline.is_none());
                assert!(row.delta_sharpe_vs_baseline.is_none());
            }
        }
        let b = run_ablation(&spec, &market, &panel, &ppo).unwrap();
        assert_eq!(a.results_csv(), b.results_csv());
        assert_eq!(a.summary_json(), b.summary_json());
    }

    #[test]
    fn regime_split_partitions_days() {
        let d0: NaiveDate = "2025-01-06".parse().unwrap();
        let days: Vec<NaiveDate> = (0..7).map(|i| d0 + chrono::Duration::days(i)).collect();
        let curve: Vec<(NaiveDate, f64)> = days
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, 100.0 + i as f64))
            .collect();
        // Days 1..=3 high-vol, rest low-vol.
        let vix: Vec<(NaiveDate, f64)> = days
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, if (1..=3).contains(&i) { 28.0 } else { 15.0 }))
            .collect();
        let rows = regime_split(&[("full".to_string(), curve)], &vix, 20.0).unwrap();
        assert_eq!(rows.len(), 2);
        let high = rows.iter().find(|r| r.regime == "high_vol").unwrap();
        let low = rows.iter().find(|r| r.regime == "low_vol").unwrap();
        assert_eq!(high.n_days + low.n_days, 6);
        assert_eq!(high.n_days, 3);

        // Constant low vix: the high-vol side is empty.
        let flat_vix: Vec<(NaiveDate, f64)> = days.iter().map(|d| (*d, 15.0)).collect();
        let curve2: Vec<(NaiveDate, f64)> = days.iter().map(|d| (*d, 100.0)).collect();
        let rows = regime_split(&[("x".to_string(), curve2)], &flat_vix, 20.0).unwrap();
        let high = rows.iter().find(|r| r.regime == "high_vol").unwrap();
        assert_eq!(high.n_days, 0);
        assert!(high.mean_daily_return.is_none());
        assert!(matches!(
            regime_stats(&[], "high_vol"),
            Err(BenchError::EmptyRegime { days: 0, .. })
        ));
    }

    /// Policy whose heads are biased to one fixed action.
    fn biased_policy(obs_width: usize, n_tickers: usize, action_index: usize) -> PolicyParams {
        let shape = PolicyShape { obs_width, n_tickers, hidden: 4 };
        let mut params = PolicyParams::zeros(shape);
        // Head biases sit right after each head's weight block; nudge the
        // chosen action's bias on every head.
        for t in 0..n_tickers {
            let base = shape_head_bias_offset(&shape, t);
            params.theta[base + action_index] = 1_000.0;
        }
        params
    }

    /// Offset arithmetic mirrored from the layout (kept test-local).
    fn shape_head_bias_offset(shape: &PolicyShape, t: usize) -> usize {
        let h = shape.hidden;
        let trunk = h * shape.obs_width + h + h * h + h;
        trunk + t * (3 * h + 3) + 3 * h
    }

    #[test]
    fn cost_sweep_shapes_and_monotonicity() {
        let market = Arc::new(
            generate_market(&SynthConfig {
                n_tickers: 2,
                n_days: 120,
                seed: 3,
                event_rate: 0.0,
                ..SynthConfig::default()
            })
            .unwrap(),
        );
        let panel = flat_panel(&market);
        let days = market.calendar.days();
        let env = EnvConfig {
            universe: market.tickers.clone(),
            initial_cash: 10_000.0,
            cost_bp: 0.0,
            trade_lot: 10,
            feature_mask: FeatureMask::Baseline,
            reward_scale: 1e-3,
            episode: DayRange::new(days[40], days[110]).unwrap(),
        };
        let obs_width = FeatureMask::Baseline.obs_width(2);
        let buyer = CostSweepPolicy {
            label: "buyer".to_string(),
            params: biased_policy(obs_width, 2, 2),
            normalizer: ObsNormalizer::new(obs_width),
            env: env.clone(),
        };
        let holder = CostSweepPolicy {
            label: "holder".to_string(),
            params: biased_policy(obs_width, 2, 1),
            normalizer: ObsNormalizer::new(obs_width),
            env,
        };
        let rows = cost_sweep(&[buyer, holder], &DEFAULT_COST_LEVELS_BP, &market, &panel).unwrap();
        assert_eq!(rows.len(), 5);
        // The buyer trades, so its final value is non-increasing in cost.
        let buyer_finals: Vec<f64> = rows.iter().map(|r| r.cells[0].final_value).collect();
        for pair in buyer_finals.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{buyer_finals:?}");
        }
        // The holder never trades: identical results at every level.
        let holder_finals: Vec<f64> = rows.iter().map(|r| r.cells[1].final_value).collect();
        for v in &holder_finals {
            assert_eq!(*v, holder_finals[0]);
        }
        // Unsorted levels are rejected.
        assert!(cost_sweep(&[], &[5.0, 0.0], &market, &panel).is_err());
    }
}
