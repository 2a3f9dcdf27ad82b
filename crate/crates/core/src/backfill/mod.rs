//! Append-only event store keyed by (ticker, trading day).
//!
//! The store is the point-in-time boundary of the whole pipeline: bundles
//! handed to the feature extractor contain only text published at or before
//! the trading day's close, so nothing downstream can see the future. Records
//! live in a line-delimited JSON log with an in-memory index rebuilt on open.

mod adapter;

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::ContentHasher;
use crate::time::{CalendarError, DayRange, TradingCalendar};

pub use adapter::{fetch_source, AdapterConfig, AdapterError, HttpAdapter, MockAdapter, SourceAdapter};

pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Error)]
pub enum BackfillError {
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("replay parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

/// Kinds of text items the store accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    News,
    Filing,
    InsiderTrade,
    OptionsFlow,
}

/// One normalized text record from any source adapter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawItem {
    pub source_id: String,
    pub ticker: String,
    pub published_at: DateTime<Utc>,
    pub kind: ItemKind,
    pub headline: String,
    pub body: String,
    /// Pure function of the other fields; see [`RawItem::compute_checksum`].
    pub checksum: u64,
}

impl RawItem {
    pub fn new(
        source_id: impl Into<String>,
        ticker: impl Into<String>,
        published_at: DateTime<Utc>,
        kind: ItemKind,
        headline: impl Into<String>,
        body: impl Into<String>,
    ) -> Self {
        let mut item = Self {
            source_id: source_id.into(),
            ticker: ticker.into(),
            published_at,
            kind,
            headline: headline.into(),
            body: body.into(),
            checksum: 0,
        };
        item.checksum = item.compute_checksum();
        item
    }

    /// Content hash over (source_id, ticker, published_at, headline, body).
    pub fn compute_checksum(&self) -> u64 {
        let mut h = ContentHasher::new();
        h.write_str(&self.source_id)
            .write_str(&self.ticker)
            .write_i64(self.published_at.timestamp_micros())
            .write_str(&self.headline)
            .write_str(&self.body);
        h.finish()
    }
}

/// All items for one (ticker, trading day), capped by the day's close.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventBundle {
    pub ticker: String,
    pub date: NaiveDate,
    pub items: Vec<RawItem>,
    pub boundary: DateTime<Utc>,
}

impl EventBundle {
    /// Stable hash of the bundle contents, used as an extraction cache key.
    pub fn content_hash(&self) -> u64 {
        let mut h = ContentHasher::new();
        h.write_str(&self.ticker).write_str(&self.date.to_string());
        for item in &self.items {
            h.write_u64(item.checksum);
        }
        h.finish()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Line format of replay files: the RawItem schema minus the checksum,
/// which is always recomputed on import.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub source_id: String,
    pub ticker: String,
    pub published_at: DateTime<Utc>,
    pub kind: ItemKind,
    pub headline: String,
    pub body: String,
}

impl From<ReplayRecord> for RawItem {
    fn from(r: ReplayRecord) -> Self {
        RawItem::new(r.source_id, r.ticker, r.published_at, r.kind, r.headline, r.body)
    }
}

impl From<&RawItem> for ReplayRecord {
    fn from(i: &RawItem) -> Self {
        ReplayRecord {
            source_id: i.source_id.clone(),
            ticker: i.ticker.clone(),
            published_at: i.published_at,
            kind: i.kind,
            headline: i.headline.clone(),
            body: i.body.clone(),
        }
    }
}

#[derive(Debug, Default)]
struct StoreIndex {
    items: Vec<RawItem>,
    checksums: HashSet<u64>,
    by_ticker: HashMap<String, Vec<usize>>,
}

impl StoreIndex {
    fn insert(&mut self, item: RawItem) -> bool {
        if !self.checksums.insert(item.checksum) {
            return false;
        }
        let idx = self.items.len();
        self.by_ticker.entry(item.ticker.clone()).or_default().push(idx);
        self.items.push(item);
        true
    }
}

/// Append-only store with strict information-boundary queries.
///
/// Concurrency: any number of readers, one writer at a time; the RwLock
/// serializes writes and the log file is only touched under the write lock.
pub struct EventStore {
    dir: PathBuf,
    index: RwLock<StoreIndex>,
    log: Mutex<File>,
    access_log: Mutex<Vec<(String, NaiveDate)>>,
}

impl EventStore {
    /// Open (or create) the store directory and rebuild the index from the log.
    pub fn open(dir: &Path) -> Result<Self, BackfillError> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join(RECORDS_FILE);
        let mut index = StoreIndex::default();
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ReplayRecord =
                    serde_json::from_str(&line).map_err(|e| BackfillError::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                index.insert(record.into());
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            index: RwLock::new(index),
            log: Mutex::new(log),
            access_log: Mutex::new(Vec::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("store lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert items, silently skipping checksum duplicates. Returns the
    /// number of newly persisted items.
    pub fn put_items(&self, items: &[RawItem]) -> Result<usize, BackfillError> {
        let mut index = self.index.write().expect("store lock");
        let mut log = self.log.lock().expect("log lock");
        let mut inserted = 0;
        for item in items {
            let mut item = item.clone();
            item.checksum = item.compute_checksum();
            if index.checksums.contains(&item.checksum) {
                continue;
            }
            let line = serde_json::to_string(&ReplayRecord::from(&item))
                .expect("RawItem serializes");
            writeln!(log, "{line}")?;
            index.insert(item);
            inserted += 1;
        }
        log.flush()?;
        Ok(inserted)
    }

    /// Import a line-delimited replay file; equivalent to `put_items` over the
    /// parsed records. On a malformed line the already-parsed prefix stays
    /// committed and the error carries the 1-based line number.
    pub fn import_replay(&self, path: &Path) -> Result<usize, BackfillError> {
        let reader = BufReader::new(File::open(path)?);
        let mut inserted = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord =
                serde_json::from_str(&line).map_err(|e| BackfillError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            inserted += self.put_items(&[record.into()])?;
        }
        Ok(inserted)
    }

    /// Build the bundle for (ticker, date): every stored item for the ticker
    /// published inside the day's information window.
    ///
    /// The window is (previous trading day's close, this day's close], so each
    /// item lands in exactly one bundle; weekend and overnight text rolls into
    /// the next trading day. For the first calendar day the window is
    /// unbounded below.
    pub fn build_bundle(
        &self,
        ticker: &str,
        date: NaiveDate,
        calendar: &TradingCalendar,
    ) -> Result<EventBundle, BackfillError> {
        let boundary = calendar.close_utc(date)?;
        let lower = calendar
            .prev_day(date)
            .map(|prev| calendar.close_utc(prev))
            .transpose()?;
        self.access_log
            .lock()
            .expect("access log lock")
            .push((ticker.to_string(), date));

        let index = self.index.read().expect("store lock");
        let mut items: Vec<RawItem> = index
            .by_ticker
            .get(ticker)
            .map(|idxs| {
                idxs.iter()
                    .map(|&i| &index.items[i])
                    .filter(|item| {
                        item.published_at <= boundary
                            && lower.map_or(true, |lo| item.published_at > lo)
                    })
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        items.sort_by(|a, b| {
            a.published_at
                .cmp(&b.published_at)
                .then(a.checksum.cmp(&b.checksum))
        });
        Ok(EventBundle {
            ticker: ticker.to_string(),
            date,
            items,
            boundary,
        })
    }

    /// One bundle per (trading day, ticker) pair over `range`, date-major then
    /// ticker lexicographic. Non-trading days contribute nothing.
    pub fn query_bundles(
        &self,
        universe: &[String],
        range: &DayRange,
        calendar: &TradingCalendar,
    ) -> Result<Vec<EventBundle>, BackfillError> {
        let mut tickers: Vec<&String> = universe.iter().collect();
        tickers.sort();
        let mut bundles = Vec::new();
        for date in calendar.days_in(range) {
            for ticker in &tickers {
                bundles.push(self.build_bundle(ticker, date, calendar)?);
            }
        }
        Ok(bundles)
    }

    /// Every (ticker, date) requested from the store so far, in call order.
    pub fn access_log(&self) -> Vec<(String, NaiveDate)> {
        self.access_log.lock().expect("access log lock").clone()
    }

    pub fn clear_access_log(&self) {
        self.access_log.lock().expect("access log lock").clear();
    }
}

/// Deterministic serialization of a query result, one bundle per line.
pub fn bundles_to_jsonl(bundles: &[EventBundle]) -> String {
    let mut out = String::new();
    for b in bundles {
        out.push_str(&serde_json::to_string(b).expect("bundle serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn ts(s: &str) -> DateTime<Utc> {
        let naive = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap();
        Utc.from_utc_datetime(&naive)
    }

    fn item(ticker: &str, published: &str, headline: &str) -> RawItem {
        RawItem::new("test", ticker, ts(published), ItemKind::News, headline, "body")
    }

    fn temp_store(name: &str) -> EventStore {
        let dir = std::env::temp_dir().join(format!("newsalpha_store_{name}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        EventStore::open(&dir).unwrap()
    }

    #[test]
    fn put_is_idempotent() {
        let store = temp_store("idem");
        let items = vec![
            item("AAPL", "2025-01-06 10:00", "a"),
            item("AAPL", "2025-01-06 11:00", "b"),
            item("MSFT", "2025-01-06 12:00", "c"),
        ];
        assert_eq!(store.put_items(&items).unwrap(), 3);
        assert_eq!(store.put_items(&items).unwrap(), 0);
        let mut mixed = vec![item("AAPL", "2025-01-07 10:00", "d"), items[0].clone()];
        mixed.push(item("MSFT", "2025-01-07 10:00", "e"));
        assert_eq!(store.put_items(&mixed).unwrap(), 2);
    }

    #[test]
    fn bundle_respects_close_boundary() {
        let store = temp_store("boundary");
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 5);
        // Close on 2025-01-06 is 21:00 UTC (EST). 10:00 ET = 15:00 UTC.
        store
            .put_items(&[
                item("AAPL", "2025-01-06 15:00", "inside"),
                item("AAPL", "2025-01-06 21:30", "after close"),
            ])
            .unwrap();
        let bundle = store.build_bundle("AAPL", date("2025-01-06"), &cal).unwrap();
        assert_eq!(bundle.items.len(), 1);
        assert_eq!(bundle.items[0].headline, "inside");
        // The after-close item belongs to the next trading day.
        let next = store.build_bundle("AAPL", date("2025-01-07"), &cal).unwrap();
        assert_eq!(next.items.len(), 1);
        assert_eq!(next.items[0].headline, "after close");
    }

    #[test]
    fn empty_bundle_for_unknown_ticker() {
        let store = temp_store("empty");
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 5);
        let bundle = store.build_bundle("NVDA", date("2025-01-06"), &cal).unwrap();
        assert!(bundle.is_empty());
    }

    #[test]
    fn unknown_trading_day_is_error() {
        let store = temp_store("unknown_day");
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 5);
        let saturday = date("2025-01-11");
        assert!(matches!(
            store.build_bundle("AAPL", saturday, &cal),
            Err(BackfillError::Calendar(CalendarError::UnknownTradingDay { .. }))
        ));
    }

    #[test]
    fn same_timestamp_orders_by_checksum() {
        let store = temp_store("tiebreak");
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 5);
        let a = item("AAPL", "2025-01-06 15:00", "first");
        let b = item("AAPL", "2025-01-06 15:00", "second");
        store.put_items(&[a.clone(), b.clone()]).unwrap();
        let bundle = store.build_bundle("AAPL", date("2025-01-06"), &cal).unwrap();
        let mut expected = vec![a, b];
        expected.sort_by_key(|i| i.checksum);
        assert_eq!(bundle.items, expected);
    }

    #[test]
    fn query_is_dense_and_deterministic() {
        let store = temp_store("query");
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 10);
        store
            .put_items(&[
                item("MSFT", "2025-01-06 15:00", "m"),
                item("AAPL", "2025-01-08 15:00", "a"),
            ])
            .unwrap();
        let universe = vec!["MSFT".to_string(), "AAPL".to_string()];
        let range = DayRange::new(date("2025-01-06"), date("2025-01-08")).unwrap();
        let bundles = store.query_bundles(&universe, &range, &cal).unwrap();
        // 2 tickers x 3 trading days.
        assert_eq!(bundles.len(), 6);
        // Date-major, ticker lexicographic.
        assert_eq!(bundles[0].ticker, "AAPL");
        assert_eq!(bundles[1].ticker, "MSFT");
        assert_eq!(bundles[0].date, date("2025-01-06"));
        assert_eq!(bundles[5].date, date("2025-01-08"));

        let first = bundles_to_jsonl(&bundles);
        let again = bundles_to_jsonl(&store.query_bundles(&universe, &range, &cal).unwrap());
        assert_eq!(first, again);
    }

    #[test]
    fn weekend_range_produces_no_bundles() {
        let store = temp_store("weekend");
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 10);
        let range = DayRange::new(date("2025-01-11"), date("2025-01-12")).unwrap();
        let bundles = store
            .query_bundles(&["AAPL".to_string()], &range, &cal)
            .unwrap();
        assert!(bundles.is_empty());
    }

    #[test]
    fn replay_import_commits_prefix_then_errors() {
        let store = temp_store("replay");
        let dir = store.dir().to_path_buf();
        let path = dir.join("replay.jsonl");
        let good = serde_json::to_string(&ReplayRecord::from(&item(
            "AAPL",
            "2025-01-06 15:00",
            "ok",
        )))
        .unwrap();
        let good2 = serde_json::to_string(&ReplayRecord::from(&item(
            "MSFT",
            "2025-01-06 15:00",
            "ok2",
        )))
        .unwrap();
        std::fs::write(&path, format!("{good}\n{good2}\nnot json\n")).unwrap();
        let err = store.import_replay(&path).unwrap_err();
        match err {
            BackfillError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        // The two lines before the bad one are committed.
        assert_eq!(store.len(), 2);

        // A clean file imports fully and re-import is a no-op.
        let path2 = dir.join("replay2.jsonl");
        std::fs::write(&path2, format!("{good}\n{good2}\n")).unwrap();
        assert_eq!(store.import_replay(&path2).unwrap(), 0);
    }

    #[test]
    fn reopen_rebuilds_index() {
        let dir = std::env::temp_dir().join(format!("newsalpha_store_reopen_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        {
            let store = EventStore::open(&dir).unwrap();
            store
                .put_items(&[item("AAPL", "2025-01-06 15:00", "persisted")])
                .unwrap();
        }
        let store = EventStore::open(&dir).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.put_items(&[item("AAPL", "2025-01-06 15:00", "persisted")]).unwrap(), 0);
    }

    #[test]
    fn boundary_safety_random_items() {
        // Property: no bundle ever contains an item published after its boundary.
        use rand::Rng;
        let store = temp_store("prop_boundary");
        let cal = TradingCalendar::weekdays(date("2025-03-03"), 15);
        let mut rng = crate::rng::stream(99, "boundary_prop", 0);
        let tickers = ["AAPL", "MSFT", "NVDA"];
        let mut items = Vec::new();
        for i in 0..300 {
            let day_offset = rng.gen_range(0..20i64);
            let secs = rng.gen_range(0..86_400i64);
            let base = date("2025-03-01").and_hms_opt(0, 0, 0).unwrap();
            let published =
                Utc.from_utc_datetime(&(base + chrono::Duration::days(day_offset) + chrono::Duration::seconds(secs)));
            let ticker = tickers[rng.gen_range(0..tickers.len())];
            items.push(RawItem::new(
                "prop",
                ticker,
                published,
                ItemKind::News,
                format!("h{i}"),
                "",
            ));
        }
        store.put_items(&items).unwrap();
        let range = DayRange::new(date("2025-03-03"), date("2025-03-21")).unwrap();
        let universe: Vec<String> = tickers.iter().map(|t| t.to_string()).collect();
        let mut seen = 0;
        for bundle in store.query_bundles(&universe, &range, &cal).unwrap() {
            for item in &bundle.items {
                assert!(item.published_at <= bundle.boundary);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }
}
