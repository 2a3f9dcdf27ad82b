//! Deterministic synthetic market with plantable alpha and regime structure.
//!
//! Prices follow a geometric random walk whose volatility and cross-sectional
//! correlation depend on a two-state (calm/shock) Markov regime. Hidden events
//! inject drift into future log-returns by re-scaling whole bars, so OHLC
//! invariants survive injection and planted signal is recoverable downstream
//! with known ground truth.

use std::path::Path;

use chrono::{NaiveDate, TimeZone};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backfill::{ItemKind, RawItem};
use crate::extract::MacroFeatures;
use crate::rng::{normal, stream};
use crate::time::{us_eastern_close_utc, DayRange, TradingCalendar};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Calm,
    Shock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ohlcv {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// A planted alpha event: drift added to log-returns of `ticker` over the
/// `horizon_days` trading days strictly after `date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenEvent {
    pub ticker: String,
    pub date: NaiveDate,
    /// -1 or +1.
    pub true_alpha_direction: i8,
    /// In (0, 1].
    pub strength: f64,
    /// 1..=20.
    pub horizon_days: u32,
    pub alpha_per_day: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tickers: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Daily log-return volatility per regime.
    pub base_vol_calm: f64,
    pub base_vol_shock: f64,
    /// VIX mean-reversion target per regime, speed, and innovation scale.
    pub vix_calm_level: f64,
    pub vix_shock_level: f64,
    pub vix_mean_reversion: f64,
    pub vix_noise: f64,
    /// Pairwise correlation injected through a common factor, per regime.
    pub corr_calm: f64,
    pub corr_shock: f64,
    /// Markov transition probabilities between regimes.
    pub p_calm_to_shock: f64,
    pub p_shock_to_calm: f64,
    /// Events per ticker-day in [0, 1].
    pub event_rate: f64,
    /// Total log-return injected by a strength-1 event over its horizon.
    pub alpha_scale: f64,
    pub event_horizon_min: u32,
    pub event_horizon_max: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tickers: 38,
            n_days: 250,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 2).expect("valid date"),
            base_vol_calm: 0.010,
            base_vol_shock: 0.025,
            vix_calm_level: 16.0,
            vix_shock_level: 35.0,
            vix_mean_reversion: 0.25,
            vix_noise: 0.8,
            corr_calm: 0.15,
            corr_shock: 0.60,
            p_calm_to_shock: 0.02,
            p_shock_to_calm: 0.10,
            event_rate: 0.08,
            alpha_scale: 0.12,
            event_horizon_min: 3,
            event_horizon_max: 10,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |msg: &str| Err(SynthError::Config(msg.to_string()));
        if self.n_tickers == 0 || self.n_days == 0 {
            return err("n_tickers and n_days must be positive");
        }
        if self.base_vol_calm <= 0.0 || self.base_vol_shock <= 0.0 {
            return err("volatilities must be positive");
        }
        if self.vix_calm_level <= 0.0 || self.vix_shock_level <= 0.0 || self.vix_noise <= 0.0 {
            return err("vix parameters must be positive");
        }
        if !(0.0..=1.0).contains(&self.vix_mean_reversion) {
            return err("vix_mean_reversion must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.corr_calm) || !(0.0..=1.0).contains(&self.corr_shock) {
            return err("correlations must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.p_calm_to_shock) || !(0.0..=1.0).contains(&self.p_shock_to_calm) {
            return err("transition probabilities must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.event_rate) {
            return err("event_rate must be in [0, 1]");
        }
        if self.alpha_scale < 0.0 {
            return err("alpha_scale must be non-negative");
        }
        if self.event_horizon_min < 1
            || self.event_horizon_max > 20
            || self.event_horizon_min > self.event_horizon_max
        {
            return err("event horizons must satisfy 1 <= min <= max <= 20");
        }
        Ok(())
    }

    pub fn tickers(&self) -> Vec<String> {
        (0..self.n_tickers).map(|i| format!("SYN{i:02}")).collect()
    }
}

/// Full synthetic market: bars, macro series, and the regime path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketData {
    pub calendar: TradingCalendar,
    pub tickers: Vec<String>,
    /// `ohlcv[day][ticker]`.
    pub ohlcv: Vec<Vec<Ohlcv>>,
    /// One entry per day; constant across tickers.
    pub macro_series: Vec<MacroFeatures>,
    pub regimes: Vec<Regime>,
}

impl MarketData {
    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn close(&self, day_idx: usize, ticker_idx: usize) -> f64 {
        self.ohlcv[day_idx][ticker_idx].close
    }

    /// Indices of calendar days inside `range`, in order.
    pub fn day_indices(&self, range: &DayRange) -> Vec<usize> {
        self.calendar
            .days()
            .iter()
            .enumerate()
            .filter(|(_, d)| range.contains(**d))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> std::io::Result<()> {
        crate::fsio::write_atomic_str(path, &serde_json::to_string(self).expect("market serializes"))
    }

    pub fn load_json(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Generate the market for `config`. Fully reproducible from `config.seed`.
pub fn generate_market(config: &SynthConfig) -> Result<MarketData, SynthError> {
    config.validate()?;
    let regimes = draw_regimes(config);
    generate_market_with_regimes(config, &regimes)
}

/// Generate a market over an explicit regime path (used by scenario tests;
/// `generate_market` draws the path from the seed).
pub fn generate_market_with_regimes(
    config: &SynthConfig,
    regimes: &[Regime],
) -> Result<MarketData, SynthError> {
    config.validate()?;
    if regimes.len() != config.n_days {
        return Err(SynthError::Config(format!(
            "regime path length {} != n_days {}",
            regimes.len(),
            config.n_days
        )));
    }
    let calendar = TradingCalendar::weekdays(config.start_date, config.n_days);
    let tickers = config.tickers();
    let macro_series = draw_macro_series(config, regimes);

    let mut factor = stream(config.seed, "market_factor", 0);
    let factor_shocks: Vec<f64> = (0..config.n_days).map(|_| normal(&mut factor)).collect();

    let mut init_rng = stream(config.seed, "init_price", 0);
    let mut ohlcv = vec![Vec::with_capacity(config.n_tickers); config.n_days];
    for t in 0..config.n_tickers {
        let init_price = 20.0 + 180.0 * init_rng.gen::<f64>();
        let mut ticker_rng = stream(config.seed, "ticker", t as u64);
        let mut prev_close = init_price;
        for d in 0..config.n_days {
            let (vol, rho) = match regimes[d] {
                Regime::Calm => (config.base_vol_calm, config.corr_calm),
                Regime::Shock => (config.base_vol_shock, config.corr_shock),
            };
            let z = rho.sqrt() * factor_shocks[d] + (1.0 - rho).sqrt() * normal(&mut ticker_rng);
            let close = prev_close * (vol * z).exp();
            let open = prev_close;
            let body_hi = open.max(close);
            let body_lo = open.min(close);
            let wick_hi = normal(&mut ticker_rng).abs() * vol * 0.5;
            let wick_lo = normal(&mut ticker_rng).abs() * vol * 0.5;
            let volume = (1.0e6 * (0.3 * normal(&mut ticker_rng)).exp()).max(1.0).round();
            ohlcv[d].push(Ohlcv {
                open,
                high: body_hi * wick_hi.exp(),
                low: body_lo * (-wick_lo).exp(),
                close,
                volume,
            });
            prev_close = close;
        }
    }

    Ok(MarketData {
        calendar,
        tickers,
        ohlcv,
        macro_series,
        regimes: regimes.to_vec(),
    })
}

fn draw_regimes(config: &SynthConfig) -> Vec<Regime> {
    let mut rng = stream(config.seed, "regime", 0);
    let mut regimes = Vec::with_capacity(config.n_days);
    let mut current = Regime::Calm;
    for _ in 0..config.n_days {
        regimes.push(current);
        let flip: f64 = rng.gen();
        current = match current {
            Regime::Calm if flip < config.p_calm_to_shock => Regime::Shock,
            Regime::Shock if flip < config.p_shock_to_calm => Regime::Calm,
            other => other,
        };
    }
    regimes
}

fn draw_macro_series(config: &SynthConfig, regimes: &[Regime]) -> Vec<MacroFeatures> {
    let mut vix_rng = stream(config.seed, "vix", 0);
    let mut treasury_rng = stream(config.seed, "treasury", 0);
    let mut spread_rng = stream(config.seed, "credit_spread", 0);
    let mut flag_rng = stream(config.seed, "macro_flag", 0);

    let mut series = Vec::with_capacity(regimes.len());
    let mut vix = config.vix_calm_level;
    let mut treasury = 4.1;
    let mut spread = 3.0;
    for (d, regime) in regimes.iter().enumerate() {
        let vix_target = match regime {
            Regime::Calm => config.vix_calm_level,
            Regime::Shock => config.vix_shock_level,
        };
        vix += config.vix_mean_reversion * (vix_target - vix) + config.vix_noise * normal(&mut vix_rng);
        vix = vix.max(5.0);

        treasury = (treasury + 0.02 * normal(&mut treasury_rng)).clamp(3.3, 5.0);
        let spread_target = match regime {
            Regime::Calm => 3.0,
            Regime::Shock => 4.5,
        };
        spread += 0.2 * (spread_target - spread) + 0.05 * normal(&mut spread_rng);
        spread = spread.max(0.3);

        let market_sentiment =
            (-(vix - 22.0) / 15.0 + 0.1 * normal(&mut flag_rng)).clamp(-1.0, 1.0);
        let switched = d > 0 && regimes[d - 1] != *regime;
        let flag_p = match regime {
            Regime::Calm => 0.03,
            Regime::Shock => 0.15,
        };
        let macro_event_flag = if switched || flag_rng.gen::<f64>() < flag_p {
            1.0
        } else {
            0.0
        };

        series.push(MacroFeatures {
            vix,
            treasury_10y: treasury,
            credit_spread: spread,
            market_sentiment,
            macro_event_flag,
        });
    }
    series
}

/// Draw hidden events and inject their alpha into `market`.
///
/// Injection multiplies every bar of an affected day by the cumulative drift
/// factor, so the day-over-day close return gains exactly `alpha_per_day`
/// per active event while intrabar OHLC ordering is untouched. Events are
/// never scheduled so close to the sample end that their horizon would
/// outrun it.
pub fn generate_events(config: &SynthConfig, market: &mut MarketData) -> Result<Vec<HiddenEvent>, SynthError> {
    config.validate()?;
    let n_days = market.n_days();
    let mut events = Vec::new();
    for (t, ticker) in market.tickers.clone().iter().enumerate() {
        let mut rng = stream(config.seed, "events", t as u64);
        for d in 0..n_days {
            if rng.gen::<f64>() >= config.event_rate {
                continue;
            }
            let direction: i8 = if rng.gen::<bool>() { 1 } else { -1 };
            let strength = 0.2 + 0.8 * rng.gen::<f64>();
            let horizon = rng.gen_range(config.event_horizon_min..=config.event_horizon_max);
            if d + horizon as usize > n_days - 1 {
                continue;
            }
            let alpha_per_day =
                direction as f64 * strength * config.alpha_scale / horizon as f64;
            events.push(HiddenEvent {
                ticker: ticker.clone(),
                date: market.calendar.day(d).expect("day in calendar"),
                true_alpha_direction: direction,
                strength,
                horizon_days: horizon,
                alpha_per_day,
            });
        }
    }
    inject_alpha(market, &events);
    events.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.ticker.cmp(&b.ticker)));
    Ok(events)
}

/// Inject drift for explicit events into an existing market, preserving
/// OHLC invariants. `generate_events` uses this internally; scenario
/// builders call it directly to plant custom event sets.
pub fn inject_alpha(market: &mut MarketData, events: &[HiddenEvent]) {
    let n_days = market.n_days();
    for event in events {
        let t = market
            .ticker_index(&event.ticker)
            .expect("event ticker in universe");
        let start = market
            .calendar
            .index_of(event.date)
            .expect("event date in calendar");
        // Drift applies to days start+1 ..= start+horizon; the cumulative
        // factor persists for the rest of the sample.
        let mut factor = 1.0;
        for d in (start + 1)..n_days {
            if d <= start + event.horizon_days as usize {
                factor *= event.alpha_per_day.exp();
            }
            let bar = &mut market.ohlcv[d][t];
            bar.open *= factor;
            bar.high *= factor;
            bar.low *= factor;
            bar.close *= factor;
        }
    }
}

/// One importable headline per event, timestamped 15:00 UTC on the event day
/// (inside the day's information window in both EST and EDT).
pub fn pseudo_headlines(events: &[HiddenEvent]) -> Vec<RawItem> {
    events
        .iter()
        .map(|e| {
            let word = if e.true_alpha_direction > 0 { "BULLISH" } else { "BEARISH" };
            let headline = format!(
                "{word} surprise of magnitude {:.6} for {}",
                e.strength, e.ticker
            );
            let published = chrono::Utc
                .from_utc_datetime(&e.date.and_hms_opt(15, 0, 0).expect("valid time"));
            debug_assert!(published <= us_eastern_close_utc(e.date));
            RawItem::new(
                "synth",
                e.ticker.clone(),
                published,
                ItemKind::News,
                headline,
                format!("horizon_days={}", e.horizon_days),
            )
        })
        .collect()
}

/// Per-ticker OHLCV CSV files named `<TICKER>.csv`.
pub fn export_ohlcv_csv(market: &MarketData, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, ticker) in market.tickers.iter().enumerate() {
        let mut out = String::from("date,open,high,low,close,volume\n");
        for (d, date) in market.calendar.days().iter().enumerate() {
            let bar = &market.ohlcv[d][t];
            out.push_str(&format!(
                "{date},{:.6},{:.6},{:.6},{:.6},{}\n",
                bar.open, bar.high, bar.low, bar.close, bar.volume
            ));
        }
        crate::fsio::write_atomic_str(&dir.join(format!("{ticker}.csv")), &out)?;
    }
    Ok(())
}

/// FRED-shaped macro CSV: date, vix, treasury_10y, credit_spread.
pub fn export_macro_csv(market: &MarketData, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("date,vix,treasury_10y,credit_spread\n");
    for (d, date) in market.calendar.days().iter().enumerate() {
        let m = &market.macro_series[d];
        out.push_str(&format!(
            "{date},{:.6},{:.6},{:.6}\n",
            m.vix, m.treasury_10y, m.credit_spread
        ));
    }
    crate::fsio::write_atomic_str(path, &out)
}

pub fn export_events_jsonl(events: &[HiddenEvent], path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    crate::fsio::write_atomic_str(path, &out)
}

pub fn load_events_jsonl(path: &Path) -> std::io::Result<Vec<HiddenEvent>> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(events)
}
