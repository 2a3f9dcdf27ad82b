//! Bundle-to-features extraction behind a pluggable client.
//!
//! A client is any text-in/text-out completion endpoint: the remote LLM API,
//! or the deterministic oracle in [`oracle`] that reads planted synthetic
//! headlines. Replies are parsed as JSON, clamped into schema bounds, and
//! cached by (template, bundle) content hash so re-runs never re-extract
//! identical text.

pub mod oracle;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backfill::EventBundle;
use crate::hash::fnv1a64;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("template error: {0}")]
    Template(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("extractor error: {0}")]
    Extractor(String),
    #[error("panel failure rate {failed}/{attempted} exceeds ceiling {ceiling}")]
    Panel {
        failed: usize,
        attempted: usize,
        ceiling: f64,
    },
    #[error("bundles do not form a rectangular date x ticker grid: {0}")]
    Grid(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// The four bounded stock-level dimensions plus free-text reasoning.
/// An all-zero numeric vector means "no signal".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockFeatures {
    /// Directional conviction in [-1, 1].
    pub sentiment: f64,
    /// Materiality in [0, 1].
    pub impact: f64,
    /// Evidentiary contradiction in [0, 1].
    pub conflicting_signals: f64,
    /// Narrative divergence from baseline in [0, 1].
    pub news_novelty: f64,
    /// Not fed to the agent.
    #[serde(default)]
    pub reasoning: String,
}

impl StockFeatures {
    pub fn zero() -> Self {
        Self {
            sentiment: 0.0,
            impact: 0.0,
            conflicting_signals: 0.0,
            news_novelty: 0.0,
            reasoning: String::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sentiment == 0.0
            && self.impact == 0.0
            && self.conflicting_signals == 0.0
            && self.news_novelty == 0.0
    }

    /// Clamp every numeric field into its interval, reporting what moved.
    pub fn clamp_into_bounds(&mut self) -> Vec<String> {
        let mut warnings = Vec::new();
        let mut clamp = |name: &str, value: &mut f64, lo: f64, hi: f64| {
            if !value.is_finite() {
                warnings.push(format!("{name} {value} is not finite, set to 0"));
                *value = 0.0;
            } else if *value < lo || *value > hi {
                let clamped = value.clamp(lo, hi);
                warnings.push(format!("{name} {value} clamped to {clamped}"));
                *value = clamped;
            }
        };
        clamp("sentiment", &mut self.sentiment, -1.0, 1.0);
        clamp("impact", &mut self.impact, 0.0, 1.0);
        clamp("conflicting_signals", &mut self.conflicting_signals, 0.0, 1.0);
        clamp("news_novelty", &mut self.news_novelty, 0.0, 1.0);
        warnings
    }
}

/// Cross-sectionally constant macro state for one date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroFeatures {
    pub vix: f64,
    pub treasury_10y: f64,
    pub credit_spread: f64,
    /// In [-1, 1].
    pub market_sentiment: f64,
    /// 0 or 1.
    pub macro_event_flag: f64,
}

impl Default for MacroFeatures {
    fn default() -> Self {
        Self {
            vix: 0.0,
            treasury_10y: 0.0,
            credit_spread: 0.0,
            market_sentiment: 0.0,
            macro_event_flag: 0.0,
        }
    }
}

pub const TICKER_PLACEHOLDER: &str = "{{.Ticker}}";
pub const DATE_PLACEHOLDER: &str = "{{.Date}}";

/// An extraction prompt with placeholders for ticker and date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub lineage: Option<String>,
    pub hash: u64,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        lineage: Option<String>,
    ) -> Result<Self, ExtractError> {
        let body = body.into();
        for placeholder in [TICKER_PLACEHOLDER, DATE_PLACEHOLDER] {
            match body.matches(placeholder).count() {
                1 => {}
                n => {
                    return Err(ExtractError::Template(format!(
                        "template must contain {placeholder} exactly once, found {n}"
                    )))
                }
            }
        }
        let hash = fnv1a64(body.as_bytes());
        Ok(Self {
            id: id.into(),
            body,
            lineage,
            hash,
        })
    }

    /// Load every `*.txt` file in `dir` as a template (id = filename stem),
    /// sorted by id.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, ExtractError> {
        let mut templates = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |e| e == "txt"))
            .collect();
        entries.sort();
        for path in entries {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("template")
                .to_string();
            let body = std::fs::read_to_string(&path)?;
            templates.push(Self::new(id, body, None)?);
        }
        Ok(templates)
    }
}

/// Render the prompt for one bundle: placeholders substituted, then the
/// bundle's items in stored order (or an explicit NO EVENTS marker).
pub fn render_prompt(template: &PromptTemplate, bundle: &EventBundle) -> Result<String, ExtractError> {
    for placeholder in [TICKER_PLACEHOLDER, DATE_PLACEHOLDER] {
        if template.body.matches(placeholder).count() != 1 {
            return Err(ExtractError::Template(format!(
                "template {} lost placeholder {placeholder}",
                template.id
            )));
        }
    }
    let mut text = template
        .body
        .replace(TICKER_PLACEHOLDER, &bundle.ticker)
        .replace(DATE_PLACEHOLDER, &bundle.date.to_string());
    text.push_str("\n\n=== EVENT BUNDLE ===\n");
    if bundle.items.is_empty() {
        text.push_str("NO EVENTS\n");
    } else {
        for item in &bundle.items {
            text.push_str(&format!(
                "- {} {:?}: {}\n",
                item.published_at.to_rfc3339(),
                item.kind,
                item.headline
            ));
            if !item.body.is_empty() {
                text.push_str(&format!("  {}\n", item.body));
            }
        }
    }
    Ok(text)
}

/// Result of parsing one extractor reply.
#[derive(Debug, Clone)]
pub struct ParsedFeatures {
    pub features: StockFeatures,
    pub warnings: Vec<String>,
}

/// Parse the first JSON object found in `raw` into clamped features.
pub fn parse_features(raw: &str) -> Result<ParsedFeatures, ExtractError> {
    let object = first_json_object(raw)
        .ok_or_else(|| ExtractError::Schema("no JSON object in reply".to_string()))?;
    let field = |name: &str| -> Result<f64, ExtractError> {
        object
            .get(name)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| ExtractError::Schema(format!("missing or non-numeric field {name:?}")))
    };
    let mut features = StockFeatures {
        sentiment: field("sentiment")?,
        impact: field("impact")?,
        conflicting_signals: field("conflicting_signals")?,
        news_novelty: field("news_novelty")?,
        reasoning: object
            .get("reasoning")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string(),
    };
    let warnings = features.clamp_into_bounds();
    Ok(ParsedFeatures { features, warnings })
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    for (i, ch) in raw.char_indices() {
        if ch != '{' {
            continue;
        }
        let mut iter = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = iter.next() {
            return Some(map);
        }
    }
    None
}

/// A text completion client: prompt in, raw reply out.
pub trait Extractor: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ExtractError>;
}

/// Remote LLM client speaking the usual chat-completion shape:
/// POST `{"model", "messages"}` and read the reply content.
pub struct HttpExtractor {
    pub endpoint: String,
    pub model: String,
    /// Name of the env var holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
}

impl HttpExtractor {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env,
            timeout: Duration::from_secs(60),
        }
    }
}

impl Extractor for HttpExtractor {
    fn complete(&self, prompt: &str) -> Result<String, ExtractError> {
        let mut req = ureq::post(&self.endpoint).timeout(self.timeout);
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| ExtractError::Extractor(format!("env var {var} not set")))?;
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let reply: serde_json::Value = req
            .send_json(body)
            .map_err(|e| ExtractError::Extractor(e.to_string()))?
            .into_json()
            .map_err(|e| ExtractError::Extractor(e.to_string()))?;
        reply
            .pointer("/choices/0/message/content")
            .or_else(|| reply.get("content"))
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| ExtractError::Extractor("reply has no content field".to_string()))
    }
}

/// Macro lookup for a date. Synthetic runs read the generator's series; live
/// runs use [`MacroCsv`].
pub type MacroFn<'a> = &'a dyn Fn(NaiveDate) -> MacroFeatures;

/// FRED-shaped macro CSV: `date,vix,treasury_10y,credit_spread`. The two
/// LLM-inferred regime flags are not in the file and default to zero.
pub struct MacroCsv {
    rows: HashMap<NaiveDate, MacroFeatures>,
}

impl MacroCsv {
    pub fn load(path: &Path) -> Result<Self, ExtractError> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("date") {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(ExtractError::Schema(format!(
                    "macro csv line {}: expected 4 columns, got {}",
                    i + 1,
                    parts.len()
                )));
            }
            let date: NaiveDate = parts[0]
                .parse()
                .map_err(|e| ExtractError::Schema(format!("macro csv line {}: {e}", i + 1)))?;
            let num = |s: &str| -> Result<f64, ExtractError> {
                s.trim()
                    .parse()
                    .map_err(|e| ExtractError::Schema(format!("macro csv line {}: {e}", i + 1)))
            };
            rows.insert(
                date,
                MacroFeatures {
                    vix: num(parts[1])?,
                    treasury_10y: num(parts[2])?,
                    credit_spread: num(parts[3])?,
                    market_sentiment: 0.0,
                    macro_event_flag: 0.0,
                },
            );
        }
        Ok(Self { rows })
    }

    pub fn at(&self, date: NaiveDate) -> MacroFeatures {
        self.rows.get(&date).copied().unwrap_or_default()
    }
}

/// Complete date x ticker feature matrix joined with per-date macro rows.
/// Missing extractions are all-zero cells, never holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `stock[date][ticker]`.
    pub stock: Vec<Vec<StockFeatures>>,
    /// `macros[date]`.
    pub macros: Vec<MacroFeatures>,
}

impl FeaturePanel {
    pub fn get(&self, date_idx: usize, ticker_idx: usize) -> &StockFeatures {
        &self.stock[date_idx][ticker_idx]
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.iter().position(|d| *d == date)
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn n_cells(&self) -> usize {
        self.dates.len() * self.tickers.len()
    }

    pub fn save_json(&self, path: &Path) -> std::io::Result<()> {
        crate::fsio::write_atomic_str(path, &serde_json::to_string(self).expect("panel serializes"))
    }

    pub fn load_json(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Tunables for the extraction engine.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Total attempts per bundle (first try + retries).
    pub max_attempts: u32,
    /// Exponential backoff base; attempt n sleeps base * 2^(n-1).
    pub backoff_base: Duration,
    /// Panel fails when failed/attempted exceeds this.
    pub failure_ceiling: f64,
    /// In-flight extraction cap for panel fan-out.
    pub jobs: usize,
    /// Optional client-call rate limit.
    pub rate_per_sec: Option<f64>,
    /// On-disk cache beside the backfill log, if any.
    pub cache_path: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
            failure_ceiling: 0.2,
            jobs: 8,
            rate_per_sec: None,
            cache_path: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    template_hash: u64,
    bundle_hash: u64,
    features: StockFeatures,
}

/// Caching, retrying extraction front-end over any [`Extractor`].
pub struct ExtractEngine {
    client: Box<dyn Extractor>,
    config: EngineConfig,
    cache: Mutex<HashMap<(u64, u64), StockFeatures>>,
    call_count: AtomicU64,
    warnings: Mutex<Vec<String>>,
}

impl ExtractEngine {
    pub fn new(client: Box<dyn Extractor>, config: EngineConfig) -> Result<Self, ExtractError> {
        let mut cache = HashMap::new();
        if let Some(path) = &config.cache_path {
            if path.exists() {
                let text = std::fs::read_to_string(path)?;
                for line in text.lines() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheLine = serde_json::from_str(line)
                        .map_err(|e| ExtractError::Schema(format!("cache line: {e}")))?;
                    cache.insert((entry.template_hash, entry.bundle_hash), entry.features);
                }
            }
        }
        Ok(Self {
            client,
            config,
            cache: Mutex::new(cache),
            call_count: AtomicU64::new(0),
            warnings: Mutex::new(Vec::new()),
        })
    }

    /// Client calls made so far (cache hits and empty bundles cost zero).
    pub fn call_count(&self) -> u64 {
        self.call_count.load(Ordering::SeqCst)
    }

    /// Drain the warning channel.
    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut self.warnings.lock().expect("warnings lock"))
    }

    /// Extract features for one bundle, going through the cache.
    pub fn extract_bundle(
        &self,
        template: &PromptTemplate,
        bundle: &EventBundle,
    ) -> Result<StockFeatures, ExtractError> {
        if bundle.is_empty() {
            return Ok(StockFeatures::zero());
        }
        let key = (template.hash, bundle.content_hash());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let prompt = render_prompt(template, bundle)?;
        let mut last_err = ExtractError::Extractor("no attempts made".to_string());
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 && !self.config.backoff_base.is_zero() {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            self.call_count.fetch_add(1, Ordering::SeqCst);
            match self.client.complete(&prompt).and_then(|raw| parse_features(&raw)) {
                Ok(parsed) => {
                    if !parsed.warnings.is_empty() {
                        let mut warnings = self.warnings.lock().expect("warnings lock");
                        for w in parsed.warnings {
                            warnings.push(format!("{} {}: {w}", bundle.ticker, bundle.date));
                        }
                    }
                    self.store_cache(key, &parsed.features)?;
                    return Ok(parsed.features);
                }
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    fn store_cache(&self, key: (u64, u64), features: &StockFeatures) -> Result<(), ExtractError> {
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.insert(key, features.clone()).is_none() {
            if let Some(path) = &self.config.cache_path {
                let line = serde_json::to_string(&CacheLine {
                    template_hash: key.0,
                    bundle_hash: key.1,
                    features: features.clone(),
                })
                .expect("cache line serializes");
                use std::io::Write;
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)?;
                writeln!(file, "{line}")?;
            }
        }
        Ok(())
    }

    /// Extract a complete panel from a rectangular bundle grid.
    ///
    /// Failed cells fall back to all-zero with a warning; the panel only
    /// aborts when the failure rate over attempted (non-empty) extractions
    /// exceeds the configured ceiling.
    pub fn extract_panel(
        &self,
        template: &PromptTemplate,
        bundles: &[EventBundle],
        macro_source: MacroFn<'_>,
    ) -> Result<FeaturePanel, ExtractError> {
        let (dates, tickers) = rectangular_grid(bundles)?;
        let n_t = tickers.len();
        let date_idx: HashMap<NaiveDate, usize> =
            dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let ticker_idx: HashMap<&str, usize> = tickers
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();

        let mut stock = vec![vec![StockFeatures::zero(); n_t]; dates.len()];
        // (flat cell index, outcome) per non-empty bundle.
        let outcomes: Vec<(usize, Result<StockFeatures, ExtractError>)> = if self.config.jobs <= 1 {
            bundles
                .iter()
                .filter(|b| !b.is_empty())
                .map(|b| self.extract_cell(template, b, &date_idx, &ticker_idx, n_t))
                .collect()
        } else {
            let work: Vec<&EventBundle> = bundles.iter().filter(|b| !b.is_empty()).collect();
            let next = std::sync::atomic::AtomicUsize::new(0);
            let results = Mutex::new(Vec::with_capacity(work.len()));
            std::thread::scope(|scope| {
                for _ in 0..self.config.jobs.min(work.len().max(1)) {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= work.len() {
                            break;
                        }
                        let outcome =
                            self.extract_cell(template, work[i], &date_idx, &ticker_idx, n_t);
                        results.lock().expect("results lock").push(outcome);
                    });
                }
            });
            results.into_inner().expect("results lock")
        };

        let attempted = outcomes.len();
        let mut failed = 0usize;
        let mut failures: Vec<(usize, String)> = Vec::new();
        for (cell, outcome) in outcomes {
            match outcome {
                Ok(features) => stock[cell / n_t][cell % n_t] = features,
                Err(e) => {
                    failed += 1;
                    failures.push((cell, e.to_string()));
                }
            }
        }
        if attempted > 0 && failed as f64 / attempted as f64 > self.config.failure_ceiling {
            return Err(ExtractError::Panel {
                failed,
                attempted,
                ceiling: self.config.failure_ceiling,
            });
        }
        failures.sort_by_key(|(cell, _)| *cell);
        {
            let mut warnings = self.warnings.lock().expect("warnings lock");
            for (cell, msg) in failures {
                warnings.push(format!(
                    "extraction failed for {} {}: {msg}; cell zeroed",
                    tickers[cell % n_t],
                    dates[cell / n_t]
                ));
            }
        }

        let macros = dates.iter().map(|d| macro_source(*d)).collect();
        Ok(FeaturePanel {
            dates,
            tickers,
            stock,
            macros,
        })
    }

    fn extract_cell(
        &self,
        template: &PromptTemplate,
        bundle: &EventBundle,
        date_idx: &HashMap<NaiveDate, usize>,
        ticker_idx: &HashMap<&str, usize>,
        n_t: usize,
    ) -> (usize, Result<StockFeatures, ExtractError>) {
        self.pace();
        let cell = date_idx[&bundle.date] * n_t + ticker_idx[bundle.ticker.as_str()];
        (cell, self.extract_bundle(template, bundle))
    }

    fn pace(&self) {
        if let Some(rate) = self.config.rate_per_sec {
            // Crude token pacing: space calls at 1/rate seconds.
            std::thread::sleep(Duration::from_secs_f64(1.0 / rate.max(1e-6)));
        }
    }
}

fn rectangular_grid(bundles: &[EventBundle]) -> Result<(Vec<NaiveDate>, Vec<String>), ExtractError> {
    let mut dates: Vec<NaiveDate> = bundles.iter().map(|b| b.date).collect();
    dates.sort();
    dates.dedup();
    let mut tickers: Vec<String> = bundles.iter().map(|b| b.ticker.clone()).collect();
    tickers.sort();
    tickers.dedup();
    if dates.is_empty() {
        return Err(ExtractError::Grid("no bundles".to_string()));
    }
    if bundles.len() != dates.len() * tickers.len() {
        return Err(ExtractError::Grid(format!(
            "{} bundles for {} dates x {} tickers",
            bundles.len(),
            dates.len(),
            tickers.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for b in bundles {
        if !seen.insert((b.date, b.ticker.clone())) {
            return Err(ExtractError::Grid(format!(
                "duplicate bundle for {} {}",
                b.ticker, b.date
            )));
        }
    }
    Ok((dates, tickers))
}

/// Test-only helper: read one HTTP request fully (headers, then
/// Content-Length body bytes) from a mock server socket.
#[cfg(test)]
pub(crate) fn read_http_request(stream: &mut std::net::TcpStream) -> String {
    use std::io::Read as _;
    let mut data = Vec::new();
    let mut buf = [0u8; 4096];
    loop {
        let n = stream.read(&mut buf).unwrap_or(0);
        if n == 0 {
            break;
        }
        data.extend_from_slice(&buf[..n]);
        let text = String::from_utf8_lossy(&data);
        if let Some(header_end) = text.find("\r\n\r\n") {
            let content_length = text
                .lines()
                .find_map(|l| {
                    l.to_ascii_lowercase()
                        .strip_prefix("content-length:")
                        .map(|v| v.trim().parse::<usize>().unwrap_or(0))
                })
                .unwrap_or(0);
            if data.len() >= header_end + 4 + content_length {
                break;
            }
        }
    }
    String::from_utf8_lossy(&data).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backfill::{ItemKind, RawItem};
    use chrono::{TimeZone, Utc};
    use std::sync::atomic::AtomicUsize;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn bundle(ticker: &str, day: &str, headlines: &[&str]) -> EventBundle {
        let d = date(day);
        let items = headlines
            .iter()
            .enumerate()
            .map(|(i, h)| {
                RawItem::new(
                    "test",
                    ticker,
                    Utc.from_utc_datetime(&d.and_hms_opt(10 + i as u32, 0, 0).unwrap()),
                    ItemKind::News,
                    *h,
                    "",
                )
            })
            .collect();
        EventBundle {
            ticker: ticker.to_string(),
            date: d,
            items,
            boundary: Utc.from_utc_datetime(&d.and_hms_opt(21, 0, 0).unwrap()),
        }
    }

    fn template() -> PromptTemplate {
        PromptTemplate::new("t0", "T={{.Ticker}} D={{.Date}}", None).unwrap()
    }

    #[test]
    fn render_substitutes_placeholders() {
        let rendered = render_prompt(&template(), &bundle("AAPL", "2025-01-02", &[])).unwrap();
        assert!(rendered.starts_with("T=AAPL D=2025-01-02"));
        assert!(rendered.contains("NO EVENTS"));
    }

    #[test]
    fn render_lists_items_in_stored_order() {
        let rendered =
            render_prompt(&template(), &bundle("AAPL", "2025-01-02", &["early", "late"])).unwrap();
        let early = rendered.find("early").unwrap();
        let late = rendered.find("late").unwrap();
        assert!(early < late);
        assert!(!rendered.contains("NO EVENTS"));
    }

    #[test]
    fn template_requires_each_placeholder_once() {
        assert!(PromptTemplate::new("bad", "only {{.Ticker}}", None).is_err());
        assert!(PromptTemplate::new("bad", "{{.Ticker}} {{.Ticker}} {{.Date}}", None).is_err());
    }

    #[test]
    fn parse_reads_calibration_example_values() {
        let raw = r#"Some preamble.
        {"sentiment":0.8,"impact":0.9,"conflicting_signals":0.1,"news_novelty":0.5,"reasoning":"guidance surprise"}"#;
        let parsed = parse_features(raw).unwrap();
        assert_eq!(parsed.features.sentiment, 0.8);
        assert_eq!(parsed.features.impact, 0.9);
        assert_eq!(parsed.features.conflicting_signals, 0.1);
        assert_eq!(parsed.features.news_novelty, 0.5);
        assert_eq!(parsed.features.reasoning, "guidance surprise");
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn parse_clamps_out_of_range_values() {
        let raw = r#"{"sentiment":1.7,"impact":0.5,"conflicting_signals":0.0,"news_novelty":0.2}"#;
        let parsed = parse_features(raw).unwrap();
        assert_eq!(parsed.features.sentiment, 1.0);
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("sentiment"));
    }

    #[test]
    fn parse_rejects_braceless_and_incomplete_replies() {
        assert!(matches!(parse_features("no json here"), Err(ExtractError::Schema(_))));
        assert!(matches!(
            parse_features(r#"{"sentiment":0.1,"impact":0.2}"#),
            Err(ExtractError::Schema(_))
        ));
        assert!(matches!(
            parse_features(r#"{"sentiment":"high","impact":0.2,"conflicting_signals":0,"news_novelty":0}"#),
            Err(ExtractError::Schema(_))
        ));
    }

    #[test]
    fn parse_bounds_fuzz() {
        use rand::Rng;
        let mut rng = crate::rng::stream(4, "parse_fuzz", 0);
        for _ in 0..2000 {
            let v: f64 = rng.gen_range(-50.0..50.0);
            let raw = format!(
                r#"{{"sentiment":{v},"impact":{},"conflicting_signals":{},"news_novelty":{}}}"#,
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0)
            );
            let f = parse_features(&raw).unwrap().features;
            assert!((-1.0..=1.0).contains(&f.sentiment));
            assert!((0.0..=1.0).contains(&f.impact));
            assert!((0.0..=1.0).contains(&f.conflicting_signals));
            assert!((0.0..=1.0).contains(&f.news_novelty));
        }
    }

    /// Scripted client: pops replies in order; repeats the last forever.
    struct ScriptedClient {
        replies: Vec<String>,
        cursor: AtomicUsize,
    }

    impl ScriptedClient {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: replies.iter().map(|s| s.to_string()).collect(),
                cursor: AtomicUsize::new(0),
            }
        }
    }

    impl Extractor for ScriptedClient {
        fn complete(&self, _prompt: &str) -> Result<String, ExtractError> {
            let i = self.cursor.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies[i.min(self.replies.len() - 1)].clone())
        }
    }

    const GOOD: &str = r#"{"sentiment":0.5,"impact":0.5,"conflicting_signals":0.0,"news_novelty":0.5,"reasoning":"r"}"#;

    fn engine(client: Box<dyn Extractor>) -> ExtractEngine {
        ExtractEngine::new(
            client,
            EngineConfig {
                backoff_base: Duration::ZERO,
                jobs: 1,
                ..EngineConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn empty_bundle_short_circuits() {
        let eng = engine(Box::new(ScriptedClient::new(&[GOOD])));
        let out = eng
            .extract_bundle(&template(), &bundle("AAPL", "2025-01-02", &[]))
            .unwrap();
        assert!(out.is_zero());
        assert_eq!(eng.call_count(), 0);
    }

    #[test]
    fn cache_prevents_repeat_calls() {
        let eng = engine(Box::new(ScriptedClient::new(&[GOOD])));
        let b = bundle("AAPL", "2025-01-02", &["h"]);
        let first = eng.extract_bundle(&template(), &b).unwrap();
        let second = eng.extract_bundle(&template(), &b).unwrap();
        assert_eq!(first, second);
        assert_eq!(eng.call_count(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let eng = engine(Box::new(ScriptedClient::new(&["garbage", "more garbage", GOOD])));
        let out = eng
            .extract_bundle(&template(), &bundle("AAPL", "2025-01-02", &["h"]))
            .unwrap();
        assert_eq!(out.sentiment, 0.5);
        assert_eq!(eng.call_count(), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let eng = engine(Box::new(ScriptedClient::new(&["junk"])));
        let err = eng
            .extract_bundle(&template(), &bundle("AAPL", "2025-01-02", &["h"]))
            .unwrap_err();
        assert!(matches!(err, ExtractError::Schema(_)));
        assert_eq!(eng.call_count(), 3);
    }

    #[test]
    fn disk_cache_survives_reopen() {
        let dir = std::env::temp_dir().join(format!("newsalpha_cache_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cache.jsonl");
        let b = bundle("AAPL", "2025-01-02", &["h"]);
        {
            let eng = ExtractEngine::new(
                Box::new(ScriptedClient::new(&[GOOD])),
                EngineConfig {
                    cache_path: Some(path.clone()),
                    backoff_base: Duration::ZERO,
                    jobs: 1,
                    ..EngineConfig::default()
                },
            )
            .unwrap();
            eng.extract_bundle(&template(), &b).unwrap();
            assert_eq!(eng.call_count(), 1);
        }
        let eng = ExtractEngine::new(
            Box::new(ScriptedClient::new(&["never used"])),
            EngineConfig {
                cache_path: Some(path),
                backoff_base: Duration::ZERO,
                jobs: 1,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        let out = eng.extract_bundle(&template(), &b).unwrap();
        assert_eq!(out.sentiment, 0.5);
        assert_eq!(eng.call_count(), 0);
    }

    fn grid_bundles() -> Vec<EventBundle> {
        let mut out = Vec::new();
        for day in ["2025-01-02", "2025-01-03"] {
            for ticker in ["AAPL", "MSFT", "NVDA"] {
                out.push(bundle(ticker, day, &["h"]));
            }
        }
        out
    }

    #[test]
    fn panel_fills_every_cell() {
        let eng = engine(Box::new(ScriptedClient::new(&[GOOD])));
        let panel = eng
            .extract_panel(&template(), &grid_bundles(), &|_| MacroFeatures::default())
            .unwrap();
        assert_eq!(panel.dates.len(), 2);
        assert_eq!(panel.tickers.len(), 3);
        assert!(panel.stock.iter().flatten().all(|f| f.sentiment == 0.5));
        assert_eq!(panel.macros.len(), 2);
    }

    /// Fails permanently for one ticker, succeeds otherwise.
    struct OneBadTicker;

    impl Extractor for OneBadTicker {
        fn complete(&self, prompt: &str) -> Result<String, ExtractError> {
            if prompt.contains("T=NVDA") {
                Err(ExtractError::Extractor("boom".to_string()))
            } else {
                Ok(GOOD.to_string())
            }
        }
    }

    #[test]
    fn panel_zeroes_failed_cells_below_ceiling() {
        let eng = ExtractEngine::new(
            Box::new(OneBadTicker),
            EngineConfig {
                backoff_base: Duration::ZERO,
                failure_ceiling: 0.5,
                jobs: 1,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        let panel = eng
            .extract_panel(&template(), &grid_bundles(), &|_| MacroFeatures::default())
            .unwrap();
        let nvda = panel.ticker_index("NVDA").unwrap();
        for d in 0..2 {
            assert!(panel.get(d, nvda).is_zero());
        }
        let warnings = eng.take_warnings();
        assert_eq!(warnings.len(), 2);
        assert!(warnings[0].contains("NVDA"));
    }

    #[test]
    fn panel_errors_above_failure_ceiling() {
        let eng = ExtractEngine::new(
            Box::new(OneBadTicker),
            EngineConfig {
                backoff_base: Duration::ZERO,
                failure_ceiling: 0.2,
                jobs: 1,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        // 2 of 6 cells fail: 33% > 20%.
        assert!(matches!(
            eng.extract_panel(&template(), &grid_bundles(), &|_| MacroFeatures::default()),
            Err(ExtractError::Panel { failed: 2, attempted: 6, .. })
        ));
    }

    #[test]
    fn panel_rejects_ragged_grids() {
        let mut bundles = grid_bundles();
        bundles.pop();
        let eng = engine(Box::new(ScriptedClient::new(&[GOOD])));
        assert!(matches!(
            eng.extract_panel(&template(), &bundles, &|_| MacroFeatures::default()),
            Err(ExtractError::Grid(_))
        ));
    }

    #[test]
    fn panel_is_identical_across_job_counts() {
        for jobs in [1usize, 4] {
            let eng = ExtractEngine::new(
                Box::new(ScriptedClient::new(&[GOOD])),
                EngineConfig {
                    backoff_base: Duration::ZERO,
                    jobs,
                    ..EngineConfig::default()
                },
            )
            .unwrap();
            let panel = eng
                .extract_panel(&template(), &grid_bundles(), &|_| MacroFeatures::default())
                .unwrap();
            assert_eq!(panel.stock[0][0].sentiment, 0.5);
            assert_eq!(panel.n_cells(), 6);
        }
    }

    #[test]
    fn http_extractor_reads_chat_completion_replies() {
        use std::io::Write as _;
        use std::net::TcpListener;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let request = super::read_http_request(&mut stream);
                // The request is a POST with model and messages.
                assert!(request.starts_with("POST"));
                assert!(request.contains("\"model\":\"test-model\""));
                assert!(request.contains("AAPL"));
                let body = serde_json::json!({
                    "choices": [{"message": {"content": GOOD}}]
                })
                .to_string();
                let response = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        let client = HttpExtractor::new(format!("http://{addr}/v1/chat"), "test-model", None);
        let reply = client.complete("Features for AAPL on 2025-01-02").unwrap();
        let parsed = parse_features(&reply).unwrap();
        assert_eq!(parsed.features.sentiment, 0.5);
    }

    #[test]
    fn macro_csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("newsalpha_macro_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("macro.csv");
        std::fs::write(&path, "date,vix,treasury_10y,credit_spread\n2025-01-02,16.5,4.1,3.2\n").unwrap();
        let csv = MacroCsv::load(&path).unwrap();
        let m = csv.at(date("2025-01-02"));
        assert_eq!(m.vix, 16.5);
        assert_eq!(m.market_sentiment, 0.0);
        assert_eq!(csv.at(date("2030-01-01")), MacroFeatures::default());
    }
}
