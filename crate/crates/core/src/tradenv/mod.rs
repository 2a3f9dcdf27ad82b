//! Episodic multi-ticker trading environment with cost-aware accounting.
//!
//! One step per trading day: trades execute at the day's close, the pointer
//! advances, and the reward is the scaled mark-to-market value change of the
//! positions held overnight. Costs are proportional to traded notional and
//! tracked separately so the accounting identity
//! `value = initial_cash + sum(value_change) - cumulative_costs` holds at
//! every step. No shorting, no margin.

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{FeaturePanel, MacroFeatures};
use crate::synthmarket::MarketData;
use crate::time::DayRange;

/// Trading days of history required before an episode may start.
pub const WARMUP_DAYS: usize = 30;
/// Indicator columns per ticker: 1-day log return, MACD, RSI-14.
pub const N_INDICATORS: usize = 3;
/// Macro observation width: vix, treasury, credit spread, sentiment, flag.
pub const N_MACRO: usize = 5;
/// Stock feature observation width per ticker.
pub const N_STOCK_FEATURES: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode range {0:?} not covered by market data")]
    Range(DayRange),
    #[error("episode needs {WARMUP_DAYS} warm-up days, start index is {start_idx}")]
    Warmup { start_idx: usize },
    #[error("ticker {0} missing from market data")]
    UnknownTicker(String),
    #[error("feature panel does not cover {0}")]
    PanelCoverage(String),
    #[error("observation width {got}, expected {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error("invalid env config: {0}")]
    Config(String),
}

/// Observation feature groups; masked groups are omitted entirely, so the
/// observation width depends on the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMask {
    Baseline,
    LlmOnly,
    MacroOnly,
    Full,
}

impl FeatureMask {
    pub const ALL: [FeatureMask; 4] = [
        FeatureMask::Baseline,
        FeatureMask::LlmOnly,
        FeatureMask::MacroOnly,
        FeatureMask::Full,
    ];

    pub fn includes_stock(&self) -> bool {
        matches!(self, FeatureMask::LlmOnly | FeatureMask::Full)
    }

    pub fn includes_macro(&self) -> bool {
        matches!(self, FeatureMask::MacroOnly | FeatureMask::Full)
    }

    /// Observation width for `n_tickers`:
    /// 1 (cash) + T (close) + T (holding) + 3T (indicators)
    /// + 4T if stock features included + 5 if macro included.
    pub fn obs_width(&self, n_tickers: usize) -> usize {
        let mut width = 1 + 2 * n_tickers + N_INDICATORS * n_tickers;
        if self.includes_stock() {
            width += N_STOCK_FEATURES * n_tickers;
        }
        if self.includes_macro() {
            width += N_MACRO;
        }
        width
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureMask::Baseline => "baseline",
            FeatureMask::LlmOnly => "llm_only",
            FeatureMask::MacroOnly => "macro_only",
            FeatureMask::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub universe: Vec<String>,
    pub initial_cash: f64,
    /// Per-side cost on traded notional, in basis points.
    pub cost_bp: f64,
    /// Max shares bought per buy action.
    pub trade_lot: u32,
    pub feature_mask: FeatureMask,
    pub reward_scale: f64,
    pub episode: DayRange,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.universe.is_empty() {
            return Err(EnvError::Config("universe is empty".to_string()));
        }
        if self.initial_cash <= 0.0 {
            return Err(EnvError::Config("initial_cash must be positive".to_string()));
        }
        if self.cost_bp < 0.0 {
            return Err(EnvError::Config("cost_bp must be non-negative".to_string()));
        }
        if self.trade_lot < 1 {
            return Err(EnvError::Config("trade_lot must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Per-ticker discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Liquidate the entire holding (-1).
    Sell,
    /// No-op (0).
    Hold,
    /// Buy up to `trade_lot` shares (+1).
    Buy,
}

impl Action {
    /// Categorical head index order: 0 -> Sell, 1 -> Hold, 2 -> Buy.
    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Action::Sell,
            1 => Action::Hold,
            _ => Action::Buy,
        }
    }

    pub fn as_i8(&self) -> i8 {
        match self {
            Action::Sell => -1,
            Action::Hold => 0,
            Action::Buy => 1,
        }
    }
}

pub type ActionVector = Vec<Action>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub cash: f64,
    /// Shares per universe ticker, never negative.
    pub holdings: Vec<u64>,
    pub cumulative_costs: f64,
}

impl PortfolioState {
    pub fn new(initial_cash: f64, n_tickers: usize) -> Self {
        Self {
            cash: initial_cash,
            holdings: vec![0; n_tickers],
            cumulative_costs: 0.0,
        }
    }

    /// Cash plus holdings marked at `prices`, summed in ticker order.
    pub fn value(&self, prices: &[f64]) -> f64 {
        let mut v = self.cash;
        for (h, p) in self.holdings.iter().zip(prices) {
            v += *h as f64 * p;
        }
        v
    }
}

/// Result of one trade pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct TradeOutcome {
    /// Total traded notional this step.
    pub turnover: f64,
    /// Costs charged this step.
    pub costs: f64,
}

/// Execute one action vector at `prices`: all sells first (freeing cash),
/// then buys, each pass in universe order. Infeasible buys degrade to the
/// largest affordable share count, possibly zero.
pub fn apply_trades(
    portfolio: &mut PortfolioState,
    actions: &[Action],
    prices: &[f64],
    cost_bp: f64,
    trade_lot: u32,
) -> TradeOutcome {
    let fee_rate = cost_bp / 10_000.0;
    let mut outcome = TradeOutcome::default();
    for (t, action) in actions.iter().enumerate() {
        if *action == Action::Sell && portfolio.holdings[t] > 0 {
            let notional = portfolio.holdings[t] as f64 * prices[t];
            let cost = notional * fee_rate;
            portfolio.cash += notional - cost;
            portfolio.cumulative_costs += cost;
            portfolio.holdings[t] = 0;
            outcome.turnover += notional;
            outcome.costs += cost;
        }
    }
    for (t, action) in actions.iter().enumerate() {
        if *action != Action::Buy {
            continue;
        }
        let unit = prices[t] * (1.0 + fee_rate);
        let mut quantity = ((portfolio.cash / unit).floor() as u64).min(trade_lot as u64);
        while quantity > 0 && quantity as f64 * unit > portfolio.cash {
            quantity -= 1;
        }
        if quantity == 0 {
            continue;
        }
        let notional = quantity as f64 * prices[t];
        let cost = notional * fee_rate;
        portfolio.cash -= notional + cost;
        portfolio.cumulative_costs += cost;
        portfolio.holdings[t] += quantity;
        outcome.turnover += notional;
        outcome.costs += cost;
    }
    debug_assert!(portfolio.cash >= 0.0, "cash went negative: {}", portfolio.cash);
    outcome
}

/// Per-ticker indicator columns computed over the whole market.
#[derive(Debug, Clone)]
pub struct IndicatorPanel {
    /// `[day][ticker]` each.
    pub ret1: Vec<Vec<f64>>,
    pub macd: Vec<Vec<f64>>,
    pub rsi: Vec<Vec<f64>>,
}

/// 1-day log return, MACD (EMA12 - EMA26 of close), and RSI-14 with Wilder
/// smoothing. Flat series read RSI 50; EMA updates use the fixed-point form
/// `ema += alpha * (close - ema)` so a constant series gives MACD 0 exactly.
pub fn compute_indicators(market: &MarketData) -> IndicatorPanel {
    let n_days = market.n_days();
    let n_tickers = market.n_tickers();
    let mut ret1 = vec![vec![0.0; n_tickers]; n_days];
    let mut macd = vec![vec![0.0; n_tickers]; n_days];
    let mut rsi = vec![vec![50.0; n_tickers]; n_days];
    let alpha12 = 2.0 / 13.0;
    let alpha26 = 2.0 / 27.0;
    const RSI_PERIOD: f64 = 14.0;
    for t in 0..n_tickers {
        let mut ema12 = market.close(0, t);
        let mut ema26 = ema12;
        let mut avg_gain = 0.0;
        let mut avg_loss = 0.0;
        for d in 1..n_days {
            let close = market.close(d, t);
            let prev = market.close(d - 1, t);
            ret1[d][t] = (close / prev).ln();

            ema12 += alpha12 * (close - ema12);
            ema26 += alpha26 * (close - ema26);
            macd[d][t] = ema12 - ema26;

            let diff = close - prev;
            let gain = diff.max(0.0);
            let loss = (-diff).max(0.0);
            if d as f64 <= RSI_PERIOD {
                // Simple average over the diffs seen so far.
                let n = d as f64;
                avg_gain += (gain - avg_gain) / n;
                avg_loss += (loss - avg_loss) / n;
            } else {
                avg_gain = (avg_gain * (RSI_PERIOD - 1.0) + gain) / RSI_PERIOD;
                avg_loss = (avg_loss * (RSI_PERIOD - 1.0) + loss) / RSI_PERIOD;
            }
            rsi[d][t] = if avg_gain == 0.0 && avg_loss == 0.0 {
                50.0
            } else if avg_loss == 0.0 {
                100.0
            } else {
                100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
            };
        }
    }
    IndicatorPanel { ret1, macd, rsi }
}

/// Streaming per-dimension observation normalizer with clipping.
///
/// Welford updates while `update_enabled`; frozen (evaluation mode) it is a
/// pure function. Output is always inside `[-clip, clip]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObsNormalizer {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: f64,
    pub clip: f64,
    pub epsilon: f64,
    pub update_enabled: bool,
}

impl ObsNormalizer {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            m2: vec![0.0; width],
            count: 0.0,
            clip: 10.0,
            epsilon: 1e-8,
            update_enabled: true,
        }
    }

    /// Normalizer with pinned statistics, for direct evaluation setups.
    pub fn with_stats(mean: Vec<f64>, var: Vec<f64>, count: f64) -> Self {
        let m2 = var.iter().map(|v| v * count).collect();
        Self {
            mean,
            m2,
            count,
            clip: 10.0,
            epsilon: 1e-8,
            update_enabled: false,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn freeze(&mut self) {
        self.update_enabled = false;
    }

    fn variance(&self, i: usize) -> f64 {
        if self.count > 0.0 {
            self.m2[i] / self.count
        } else {
            0.0
        }
    }

    /// Fold `obs` into the running stats (when updating), then return the
    /// clipped z-scores.
    pub fn normalize(&mut self, obs: &[f64]) -> Result<Vec<f64>, EnvError> {
        if obs.len() != self.mean.len() {
            return Err(EnvError::WidthMismatch {
                got: obs.len(),
                expected: self.mean.len(),
            });
        }
        if self.update_enabled {
            self.count += 1.0;
            for (i, x) in obs.iter().enumerate() {
                let delta = x - self.mean[i];
                self.mean[i] += delta / self.count;
                self.m2[i] += delta * (x - self.mean[i]);
            }
        }
        Ok(obs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                ((x - self.mean[i]) / (self.variance(i) + self.epsilon).sqrt())
                    .clamp(-self.clip, self.clip)
            })
            .collect())
    }
}

/// Normalize one observation through `norm`.
pub fn normalize_obs(norm: &mut ObsNormalizer, obs: &[f64]) -> Result<Vec<f64>, EnvError> {
    norm.normalize(obs)
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepInfo {
    pub date: NaiveDate,
    pub turnover: f64,
    pub costs_paid: f64,
    /// Mark-to-market change of held positions over the step (pre-scaling).
    pub value_change: f64,
    pub portfolio_value: f64,
}

/// The environment. One instance is single-threaded; the observation
/// normalizer is caller-owned and not part of the env.
pub struct TradingEnv {
    pub config: EnvConfig,
    market: Arc<MarketData>,
    panel: Arc<FeaturePanel>,
    indicators: IndicatorPanel,
    /// Universe position -> market ticker column.
    market_cols: Vec<usize>,
    /// Universe position -> panel ticker column (when stock features are on).
    panel_cols: Vec<usize>,
    /// Market day index -> panel date row.
    panel_rows: Vec<Option<usize>>,
    episode_start: usize,
    episode_end: usize,
    day: usize,
    portfolio: PortfolioState,
    done: bool,
}

impl TradingEnv {
    pub fn new(
        config: EnvConfig,
        market: Arc<MarketData>,
        panel: Arc<FeaturePanel>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        let market_cols = config
            .universe
            .iter()
            .map(|t| {
                market
                    .ticker_index(t)
                    .ok_or_else(|| EnvError::UnknownTicker(t.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let episode_days = market.day_indices(&config.episode);
        let (episode_start, episode_end) = match (episode_days.first(), episode_days.last()) {
            (Some(&s), Some(&e)) if e > s => (s, e),
            _ => return Err(EnvError::Range(config.episode)),
        };
        if episode_start < WARMUP_DAYS {
            return Err(EnvError::Warmup {
                start_idx: episode_start,
            });
        }

        let panel_rows: Vec<Option<usize>> = market
            .calendar
            .days()
            .iter()
            .map(|d| panel.date_index(*d))
            .collect();
        let needs_panel = config.feature_mask.includes_stock() || config.feature_mask.includes_macro();
        if needs_panel {
            for d in episode_start..=episode_end {
                if panel_rows[d].is_none() {
                    return Err(EnvError::PanelCoverage(format!(
                        "date {}",
                        market.calendar.day(d).expect("day exists")
                    )));
                }
            }
        }
        let panel_cols = if config.feature_mask.includes_stock() {
            config
                .universe
                .iter()
                .map(|t| {
                    panel
                        .ticker_index(t)
                        .ok_or_else(|| EnvError::PanelCoverage(format!("ticker {t}")))
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            vec![0; config.universe.len()]
        };

        let indicators = compute_indicators(&market);
        let portfolio = PortfolioState::new(config.initial_cash, config.universe.len());
        Ok(Self {
            day: episode_start,
            episode_start,
            episode_end,
            market,
            panel,
            indicators,
            market_cols,
            panel_cols,
            panel_rows,
            portfolio,
            done: false,
            config,
        })
    }

    /// Steps remaining in a fresh episode.
    pub fn episode_len(&self) -> usize {
        self.episode_end - self.episode_start
    }

    pub fn obs_width(&self) -> usize {
        self.config.feature_mask.obs_width(self.config.universe.len())
    }

    pub fn current_date(&self) -> NaiveDate {
        self.market.calendar.day(self.day).expect("day in calendar")
    }

    pub fn portfolio(&self) -> &PortfolioState {
        &self.portfolio
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn prices(&self, day: usize) -> Vec<f64> {
        self.market_cols
            .iter()
            .map(|&col| self.market.close(day, col))
            .collect()
    }

    pub fn portfolio_value(&self) -> f64 {
        self.portfolio.value(&self.prices(self.day))
    }

    /// Back to episode start: all cash, zero holdings. The caller-owned
    /// normalizer is untouched.
    pub fn reset(&mut self) -> Vec<f64> {
        self.day = self.episode_start;
        self.portfolio = PortfolioState::new(self.config.initial_cash, self.config.universe.len());
        self.done = false;
        self.observation()
    }

    /// Raw (un-normalized) observation at the current day, laid out as
    /// `[cash_fraction] [close x T] [holding_fraction x T]
    /// [ret1, macd, rsi x T] [sentiment, impact, conflict, novelty x T]?
    /// [vix, treasury, spread, market_sentiment, flag]?`.
    pub fn observation(&self) -> Vec<f64> {
        let prices = self.prices(self.day);
        let value = self.portfolio.value(&prices);
        let mut obs = Vec::with_capacity(self.obs_width());
        obs.push(self.portfolio.cash / value);
        obs.extend_from_slice(&prices);
        for (t, price) in prices.iter().enumerate() {
            obs.push(self.portfolio.holdings[t] as f64 * price / value);
        }
        for &col in &self.market_cols {
            obs.push(self.indicators.ret1[self.day][col]);
            obs.push(self.indicators.macd[self.day][col]);
            obs.push(self.indicators.rsi[self.day][col]);
        }
        if self.config.feature_mask.includes_stock() {
            let row = self.panel_rows[self.day].expect("panel coverage validated");
            for &col in &self.panel_cols {
                let f = self.panel.get(row, col);
                obs.push(f.sentiment);
                obs.push(f.impact);
                obs.push(f.conflicting_signals);
                obs.push(f.news_novelty);
            }
        }
        if self.config.feature_mask.includes_macro() {
            let row = self.panel_rows[self.day].expect("panel coverage validated");
            let m: &MacroFeatures = &self.panel.macros[row];
            obs.extend_from_slice(&[
                m.vix,
                m.treasury_10y,
                m.credit_spread,
                m.market_sentiment,
                m.macro_event_flag,
            ]);
        }
        debug_assert_eq!(obs.len(), self.obs_width());
        obs
    }

    /// Trade at today's close, advance one day, and reward the scaled
    /// overnight mark-to-market change.
    pub fn step(&mut self, actions: &[Action]) -> Result<(Vec<f64>, f64, bool, StepInfo), EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        if actions.len() != self.config.universe.len() {
            return Err(EnvError::WidthMismatch {
                got: actions.len(),
                expected: self.config.universe.len(),
            });
        }
        let prices_today = self.prices(self.day);
        let outcome = apply_trades(
            &mut self.portfolio,
            actions,
            &prices_today,
            self.config.cost_bp,
            self.config.trade_lot,
        );
        self.day += 1;
        let prices_next = self.prices(self.day);
        let mut value_change = 0.0;
        for (t, h) in self.portfolio.holdings.iter().enumerate() {
            value_change += *h as f64 * (prices_next[t] - prices_today[t]);
        }
        let portfolio_value = self.portfolio.value(&prices_next);
        self.done = self.day >= self.episode_end;
        let info = StepInfo {
            date: self.current_date(),
            turnover: outcome.turnover,
            costs_paid: outcome.costs,
            value_change,
            portfolio_value,
        };
        Ok((
            self.observation(),
            self.config.reward_scale * value_change,
            self.done,
            info,
        ))
    }
}
