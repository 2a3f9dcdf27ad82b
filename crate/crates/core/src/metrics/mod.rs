//! Cross-sectional signal quality: Spearman IC, IC-IR and t-stat, hit rate,
//! quintile spread, Brier score, coverage, and the composite score.
//!
//! Daily IC is the Spearman rank correlation between a feature's values and
//! forward returns across the universe on one date. The report aggregates
//! the daily series: IC-IR = mean / sample std, t = IC-IR * sqrt(n).

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{FeaturePanel, StockFeatures};
use crate::synthmarket::MarketData;

pub const DEFAULT_MIN_NAMES: usize = 5;
pub const DEFAULT_HORIZON: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("horizon {horizon} must be in 1..{n_days}")]
    Horizon { horizon: usize, n_days: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no qualifying day in IC series")]
    EmptySeries,
    #[error("no qualifying signal cell")]
    NoSignal,
    #[error("panels not aligned: {0}")]
    Alignment(String),
}

/// The four stock-level feature columns a panel can be ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    Sentiment,
    Impact,
    ConflictingSignals,
    NewsNovelty,
}

impl FeatureName {
    pub const ALL: [FeatureName; 4] = [
        FeatureName::Sentiment,
        FeatureName::Impact,
        FeatureName::ConflictingSignals,
        FeatureName::NewsNovelty,
    ];

    pub fn value(&self, f: &StockFeatures) -> f64 {
        match self {
            FeatureName::Sentiment => f.sentiment,
            FeatureName::Impact => f.impact,
            FeatureName::ConflictingSignals => f.conflicting_signals,
            FeatureName::NewsNovelty => f.news_novelty,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureName::Sentiment => "sentiment",
            FeatureName::Impact => "impact",
            FeatureName::ConflictingSignals => "conflicting_signals",
            FeatureName::NewsNovelty => "news_novelty",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// Forward log-returns at a fixed trading-day horizon.
/// `values[d][t]` is defined only where `d + horizon` is inside the sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub horizon_days: usize,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ReturnPanel {
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// `values[d][t] = ln(close[d+h][t] / close[d][t])`.
pub fn forward_returns(market: &MarketData, horizon_days: usize) -> Result<ReturnPanel, MetricsError> {
    let n_days = market.n_days();
    if horizon_days < 1 || horizon_days >= n_days {
        return Err(MetricsError::Horizon {
            horizon: horizon_days,
            n_days,
        });
    }
    let values = (0..n_days)
        .map(|d| {
            (0..market.n_tickers())
                .map(|t| {
                    (d + horizon_days < n_days)
                        .then(|| (market.close(d + horizon_days, t) / market.close(d, t)).ln())
                })
                .collect()
        })
        .collect();
    Ok(ReturnPanel {
        horizon_days,
        dates: market.calendar.days().to_vec(),
        tickers: market.tickers.clone(),
        values,
    })
}

/// Spearman rank correlation: Pearson correlation of mid-ranks, with
/// average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::DegenerateInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(MetricsError::DegenerateInput(format!(
            "need at least 3 observations, got {}",
            xs.len()
        )));
    }
    let rx = mid_ranks(xs);
    let ry = mid_ranks(ys);
    pearson(&rx, &ry)
}

/// Average ranks, 1-based; ties share the mean of their positions.
fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in ranks"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank mean of (i+1)..=(j+1).
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateInput("constant input side".to_string()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Daily IC series with skipped-day accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DailyIcSeries {
    pub feature: FeatureName,
    pub points: Vec<(NaiveDate, f64)>,
    /// Days dropped for too few pairs or a constant side.
    pub skipped_days: usize,
}

/// One IC per panel date with at least `min_names` valid (feature, return)
/// pairs and non-constant sides; degenerate days are skipped and counted.
pub fn daily_ic_series(
    feature: FeatureName,
    panel: &FeaturePanel,
    rets: &ReturnPanel,
    min_names: usize,
) -> Result<DailyIcSeries, MetricsError> {
    let ticker_cols = align_tickers(panel, rets)?;
    let mut points = Vec::new();
    let mut skipped = 0usize;
    for (d, date) in panel.dates.iter().enumerate() {
        let rd = rets
            .date_index(*date)
            .ok_or_else(|| MetricsError::Alignment(format!("date {date} missing from returns")))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (t, &col) in ticker_cols.iter().enumerate() {
            if let Some(ret) = rets.values[rd][col] {
                xs.push(feature.value(panel.get(d, t)));
                ys.push(ret);
            }
        }
        if xs.len() < min_names.max(3) {
            skipped += 1;
            continue;
        }
        match spearman(&xs, &ys) {
            Ok(rho) => points.push((*date, rho)),
            Err(MetricsError::DegenerateInput(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    Ok(DailyIcSeries {
        feature,
        points,
        skipped_days: skipped,
    })
}

fn align_tickers(panel: &FeaturePanel, rets: &ReturnPanel) -> Result<Vec<usize>, MetricsError> {
    panel
        .tickers
        .iter()
        .map(|t| {
            rets.tickers
                .iter()
                .position(|r| r == t)
                .ok_or_else(|| MetricsError::Alignment(format!("ticker {t} missing from returns")))
        })
        .collect()
}

/// Aggregate report over a daily IC series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ICReport {
    pub daily_ics: Vec<f64>,
    pub n_days: usize,
    pub ic_mean: f64,
    /// Sample (n-1) standard deviation.
    pub ic_std: f64,
    pub ic_ir: f64,
    pub t_stat: f64,
}

impl ICReport {
    /// Placeholder for panels with no rankable signal; fails every gate.
    pub fn empty() -> Self {
        Self {
            daily_ics: Vec::new(),
            n_days: 0,
            ic_mean: 0.0,
            ic_std: 0.0,
            ic_ir: 0.0,
            t_stat: 0.0,
        }
    }
}

pub fn ic_summary(series: &DailyIcSeries) -> Result<ICReport, MetricsError> {
    summarize_ics(series.points.iter().map(|(_, ic)| *ic).collect())
}

/// Summary from raw daily ICs; exposed for paper-arithmetic checks.
pub fn summarize_ics(daily_ics: Vec<f64>) -> Result<ICReport, MetricsError> {
    let n = daily_ics.len();
    if n < 2 {
        return Err(MetricsError::DegenerateInput(format!(
            "need at least 2 daily ICs, got {n}"
        )));
    }
    if daily_ics.iter().all(|x| *x == daily_ics[0]) {
        return Err(MetricsError::DegenerateInput("zero IC dispersion".to_string()));
    }
    let mean = daily_ics.iter().sum::<f64>() / n as f64;
    let var = daily_ics.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let ic_ir = mean / std;
    Ok(ICReport {
        t_stat: ic_ir * (n as f64).sqrt(),
        daily_ics,
        n_days: n,
        ic_mean: mean,
        ic_std: std,
        ic_ir,
    })
}

/// IC report per horizon: forward returns, daily series, then summary.
pub fn ic_decay(
    feature: FeatureName,
    panel: &FeaturePanel,
    market: &MarketData,
    horizons: &[usize],
    min_names: usize,
) -> Result<Vec<(usize, ICReport)>, MetricsError> {
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::DegenerateInput(
            "horizons must be sorted ascending and distinct".to_string(),
        ));
    }
    horizons
        .iter()
        .map(|&h| {
            let rets = forward_returns(market, h)?;
            let series = daily_ic_series(feature, panel, &rets, min_names)?;
            Ok((h, ic_summary(&series)?))
        })
        .collect()
}

/// Fraction of nonzero-sentiment cells whose sentiment sign matches the
/// forward-return sign. Zero returns count as misses.
pub fn hit_rate(panel: &FeaturePanel, rets: &ReturnPanel) -> Result<f64, MetricsError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for_each_signal_cell(panel, rets, |features, ret| {
        total += 1;
        let aligned = (features.sentiment > 0.0 && ret > 0.0) || (features.sentiment < 0.0 && ret < 0.0);
        if aligned {
            hits += 1;
        }
    })?;
    if total == 0 {
        return Err(MetricsError::NoSignal);
    }
    Ok(hits as f64 / total as f64)
}

/// Mean squared error of `p_up = clamp(0.5 + 0.5 * sign(sentiment) * impact, 0, 1)`
/// against the binary up-move outcome, over nonzero-sentiment cells.
pub fn brier(panel: &FeaturePanel, rets: &ReturnPanel) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut total = 0usize;
    for_each_signal_cell(panel, rets, |features, ret| {
        let p_up = (0.5 + 0.5 * features.sentiment.signum() * features.impact).clamp(0.0, 1.0);
        let outcome = if ret > 0.0 { 1.0 } else { 0.0 };
        sum += (p_up - outcome) * (p_up - outcome);
        total += 1;
    })?;
    if total == 0 {
        return Err(MetricsError::NoSignal);
    }
    Ok(sum / total as f64)
}

fn for_each_signal_cell(
    panel: &FeaturePanel,
    rets: &ReturnPanel,
    mut visit: impl FnMut(&StockFeatures, f64),
) -> Result<(), MetricsError> {
    let ticker_cols = align_tickers(panel, rets)?;
    for (d, date) in panel.dates.iter().enumerate() {
        let rd = rets
            .date_index(*date)
            .ok_or_else(|| MetricsError::Alignment(format!("date {date} missing from returns")))?;
        for (t, &col) in ticker_cols.iter().enumerate() {
            let features = panel.get(d, t);
            if features.sentiment == 0.0 {
                continue;
            }
            if let Some(ret) = rets.values[rd][col] {
                visit(features, ret);
            }
        }
    }
    Ok(())
}

/// Mean over qualifying days of (top-quintile mean return - bottom-quintile
/// mean return), ranking tickers by `feature`. Needs >= 5 valid names per day;
/// the remainder of an uneven split goes to the outermost buckets, top first.
pub fn quintile_spread(
    feature: FeatureName,
    panel: &FeaturePanel,
    rets: &ReturnPanel,
) -> Result<f64, MetricsError> {
    let ticker_cols = align_tickers(panel, rets)?;
    let mut day_spreads = Vec::new();
    for (d, date) in panel.dates.iter().enumerate() {
        let rd = rets
            .date_index(*date)
            .ok_or_else(|| MetricsError::Alignment(format!("date {date} missing from returns")))?;
        let mut pairs: Vec<(f64, usize, f64)> = Vec::new();
        for (t, &col) in ticker_cols.iter().enumerate() {
            if let Some(ret) = rets.values[rd][col] {
                pairs.push((feature.value(panel.get(d, t)), t, ret));
            }
        }
        if pairs.len() < 5 {
            continue;
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN features").then(a.1.cmp(&b.1)));
        let sizes = quintile_sizes(pairs.len());
        let bottom: f64 =
            pairs[..sizes[0]].iter().map(|p| p.2).sum::<f64>() / sizes[0] as f64;
        let top_start = pairs.len() - sizes[4];
        let top: f64 = pairs[top_start..].iter().map(|p| p.2).sum::<f64>() / sizes[4] as f64;
        day_spreads.push(top - bottom);
    }
    if day_spreads.is_empty() {
        return Err(MetricsError::NoSignal);
    }
    Ok(day_spreads.iter().sum::<f64>() / day_spreads.len() as f64)
}

/// Contiguous rank-bucket sizes for n names in 5 buckets; the n mod 5
/// leftovers go to the outer buckets, alternating top, bottom, top, bottom.
fn quintile_sizes(n: usize) -> [usize; 5] {
    let mut sizes = [n / 5; 5];
    for i in 0..(n % 5) {
        if i % 2 == 0 {
            sizes[4] += 1;
        } else {
            sizes[0] += 1;
        }
    }
    sizes
}

/// Fraction of panel cells carrying any signal (not the all-zero vector).
pub fn signal_coverage(panel: &FeaturePanel) -> f64 {
    let total = panel.n_cells();
    if total == 0 {
        return 0.0;
    }
    let nonzero = panel.stock.iter().flatten().filter(|f| !f.is_zero()).count();
    nonzero as f64 / total as f64
}

/// Weights of the composite score. All four metric weights scale linearly;
/// `spread_scale` is the normalization constant for the spread term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub ic_ir: f64,
    pub hit: f64,
    pub spread: f64,
    pub brier: f64,
    pub spread_scale: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        Self {
            ic_ir: 0.5,
            hit: 0.3,
            spread: 0.2,
            brier: 0.0,
            spread_scale: 0.02,
        }
    }
}

/// `w_ic*ic_ir + w_hit*(2*hit - 1) + w_spread*clamp(spread/scale, -1, 1) - w_brier*brier`.
pub fn composite(
    ic_ir: f64,
    hit_rate: f64,
    quintile_spread: f64,
    brier: f64,
    weights: &CompositeWeights,
) -> f64 {
    weights.ic_ir * ic_ir
        + weights.hit * (2.0 * hit_rate - 1.0)
        + weights.spread * (quintile_spread / weights.spread_scale).clamp(-1.0, 1.0)
        - weights.brier * brier
}

/// The full candidate-level metric bundle, computed on the sentiment feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalMetrics {
    pub ic_report: ICReport,
    pub hit_rate: f64,
    pub quintile_spread: f64,
    pub brier: f64,
    pub signal_coverage: f64,
    pub composite: f64,
    pub weights: CompositeWeights,
    pub horizon_days: usize,
}

impl SignalMetrics {
    /// Metrics for a panel with no rankable sentiment: everything that needs
    /// signal is pinned to its worst value so every gate fails honestly.
    pub fn no_signal(coverage: f64, weights: CompositeWeights, horizon_days: usize) -> Self {
        Self {
            ic_report: ICReport::empty(),
            hit_rate: 0.0,
            quintile_spread: 0.0,
            brier: 1.0,
            signal_coverage: coverage,
            composite: composite(0.0, 0.0, 0.0, 1.0, &weights),
            weights,
            horizon_days,
        }
    }
}

/// Compute the whole suite at one horizon. Panels without rankable signal
/// come back as [`SignalMetrics::no_signal`] rather than an error, so gate
/// evaluation always has something to judge.
pub fn signal_metrics(
    panel: &FeaturePanel,
    rets: &ReturnPanel,
    weights: CompositeWeights,
    min_names: usize,
) -> Result<SignalMetrics, MetricsError> {
    let coverage = signal_coverage(panel);
    let ic_report = match daily_ic_series(FeatureName::Sentiment, panel, rets, min_names)
        .and_then(|s| ic_summary(&s))
    {
        Ok(report) => report,
        Err(MetricsError::EmptySeries) | Err(MetricsError::DegenerateInput(_)) => {
            return Ok(SignalMetrics::no_signal(coverage, weights, rets.horizon_days))
        }
        Err(e) => return Err(e),
    };
    let hit = match hit_rate(panel, rets) {
        Ok(h) => h,
        Err(MetricsError::NoSignal) => {
            return Ok(SignalMetrics::no_signal(coverage, weights, rets.horizon_days))
        }
        Err(e) => return Err(e),
    };
    let spread = match quintile_spread(FeatureName::Sentiment, panel, rets) {
        Ok(s) => s,
        Err(MetricsError::NoSignal) => 0.0,
        Err(e) => return Err(e),
    };
    let brier_score = brier(panel, rets)?;
    Ok(SignalMetrics {
        composite: composite(ic_report.ic_ir, hit, spread, brier_score, &weights),
        ic_report,
        hit_rate: hit,
        quintile_spread: spread,
        brier: brier_score,
        signal_coverage: coverage,
        weights,
        horizon_days: rets.horizon_days,
    })
}

/// CSV of a daily IC series: date, ic.
pub fn export_daily_ic_csv(series: &DailyIcSeries, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("date,ic\n");
    for (date, ic) in &series.points {
        out.push_str(&format!("{date},{ic:.9}\n"));
    }
    crate::fsio::write_atomic_str(path, &out)
}

/// CSV of a decay sweep: horizon, ic_mean, ic_ir, t_stat, n.
pub fn export_decay_csv(decay: &[(usize, ICReport)], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("horizon,ic_mean,ic_ir,t_stat,n\n");
    for (h, report) in decay {
        out.push_str(&format!(
            "{h},{:.9},{:.9},{:.9},{}\n",
            report.ic_mean, report.ic_ir, report.t_stat, report.n_days
        ));
    }
    crate::fsio::write_atomic_str(path, &out)
}
