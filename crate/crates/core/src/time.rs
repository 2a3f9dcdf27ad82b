//! Trading calendar, day ranges, and the daily information boundary.

use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalendarError {
    #[error("calendar is empty")]
    Empty,
    #[error("calendar days must be strictly increasing: {0} then {1}")]
    NotSorted(NaiveDate, NaiveDate),
    #[error("{date} is not a trading day in this calendar")]
    UnknownTradingDay { date: NaiveDate },
    #[error("invalid date on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("calendar I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DayRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Option<Self> {
        (start <= end).then_some(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn overlaps(&self, other: &DayRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Ordered set of trading days. Lookups are binary searches over the
/// sorted day list, so the struct serializes without auxiliary state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn from_days(days: Vec<NaiveDate>) -> Result<Self, CalendarError> {
        if days.is_empty() {
            return Err(CalendarError::Empty);
        }
        for w in days.windows(2) {
            if w[0] >= w[1] {
                return Err(CalendarError::NotSorted(w[0], w[1]));
            }
        }
        Ok(Self { days })
    }

    /// Generate `n` consecutive weekdays starting at the first weekday >= `start`.
    pub fn weekdays(start: NaiveDate, n: usize) -> Self {
        let mut days = Vec::with_capacity(n);
        let mut d = start;
        while days.len() < n {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                days.push(d);
            }
            d = d.succ_opt().expect("date overflow");
        }
        Self::from_days(days).expect("generated days are sorted")
    }

    /// One ISO date per line; an optional `date` header is tolerated.
    pub fn load_csv(path: &Path) -> Result<Self, CalendarError> {
        let text = std::fs::read_to_string(path)?;
        let mut days = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line == "date" {
                continue;
            }
            let d = line.parse::<NaiveDate>().map_err(|e| CalendarError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            days.push(d);
        }
        Self::from_days(days)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CalendarError> {
        let mut out = String::from("date\n");
        for d in &self.days {
            out.push_str(&d.to_string());
            out.push('\n');
        }
        crate::fsio::write_atomic_str(path, &out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn day(&self, idx: usize) -> Option<NaiveDate> {
        self.days.get(idx).copied()
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.days.binary_search(&d).is_ok()
    }

    pub fn index_of(&self, d: NaiveDate) -> Result<usize, CalendarError> {
        self.days
            .binary_search(&d)
            .map_err(|_| CalendarError::UnknownTradingDay { date: d })
    }

    /// Trading day immediately before `d` in this calendar, if any.
    pub fn prev_day(&self, d: NaiveDate) -> Option<NaiveDate> {
        let idx = self.days.binary_search(&d).ok()?;
        idx.checked_sub(1).and_then(|i| self.day(i))
    }

    /// Trading days of this calendar falling inside `range`, in order.
    pub fn days_in(&self, range: &DayRange) -> Vec<NaiveDate> {
        self.days
            .iter()
            .copied()
            .filter(|d| range.contains(*d))
            .collect()
    }

    /// The information boundary for trading day `d`: 16:00 US-Eastern as UTC.
    pub fn close_utc(&self, d: NaiveDate) -> Result<DateTime<Utc>, CalendarError> {
        if !self.contains(d) {
            return Err(CalendarError::UnknownTradingDay { date: d });
        }
        Ok(us_eastern_close_utc(d))
    }
}

/// 16:00 US-Eastern on `d`, converted to UTC.
///
/// Eastern is UTC-4 while daylight saving is in effect (second Sunday of
/// March through first Sunday of November, post-2007 rule) and UTC-5
/// otherwise.
pub fn us_eastern_close_utc(d: NaiveDate) -> DateTime<Utc> {
    let offset_hours = if is_us_dst(d) { 4 } else { 5 };
    let naive = d.and_hms_opt(16 + offset_hours, 0, 0).expect("valid close time");
    Utc.from_utc_datetime(&naive)
}

fn is_us_dst(d: NaiveDate) -> bool {
    let dst_start = nth_weekday(d.year(), 3, Weekday::Sun, 2);
    let dst_end = nth_weekday(d.year(), 11, Weekday::Sun, 1);
    d >= dst_start && d < dst_end
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, nth: u32) -> NaiveDate {
    let mut d = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month start");
    let mut count = 0;
    loop {
        if d.weekday() == weekday {
            count += 1;
            if count == nth {
                return d;
            }
        }
        d = d.succ_opt().expect("date overflow");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn weekday_generation_skips_weekends() {
        let cal = TradingCalendar::weekdays(date("2025-01-03"), 5);
        // Fri 3rd, Mon 6th, Tue 7th, Wed 8th, Thu 9th.
        assert_eq!(
            cal.days(),
            &[
                date("2025-01-03"),
                date("2025-01-06"),
                date("2025-01-07"),
                date("2025-01-08"),
                date("2025-01-09"),
            ]
        );
    }

    #[test]
    fn close_is_dst_aware() {
        // January: EST, close 21:00 UTC. July: EDT, close 20:00 UTC.
        assert_eq!(
            us_eastern_close_utc(date("2025-01-15")).to_rfc3339(),
            "2025-01-15T21:00:00+00:00"
        );
        assert_eq!(
            us_eastern_close_utc(date("2025-07-15")).to_rfc3339(),
            "2025-07-15T20:00:00+00:00"
        );
    }

    #[test]
    fn dst_boundaries_2025() {
        // DST starts 2025-03-09, ends 2025-11-02.
        assert!(!is_us_dst(date("2025-03-08")));
        assert!(is_us_dst(date("2025-03-09")));
        assert!(is_us_dst(date("2025-11-01")));
        assert!(!is_us_dst(date("2025-11-02")));
    }

    #[test]
    fn unknown_day_is_an_error() {
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 5);
        let saturday = date("2025-01-11");
        assert!(matches!(
            cal.index_of(saturday),
            Err(CalendarError::UnknownTradingDay { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let cal = TradingCalendar::weekdays(date("2025-01-06"), 10);
        let dir = std::env::temp_dir().join("newsalpha_cal_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("calendar.csv");
        cal.save_csv(&path).unwrap();
        let loaded = TradingCalendar::load_csv(&path).unwrap();
        assert_eq!(cal.days(), loaded.days());
    }

    #[test]
    fn range_overlap() {
        let a = DayRange::new(date("2025-01-01"), date("2025-01-31")).unwrap();
        let b = DayRange::new(date("2025-02-01"), date("2025-02-28")).unwrap();
        assert!(!a.overlaps(&b));
        let c = DayRange::new(date("2025-01-31"), date("2025-02-02")).unwrap();
        assert!(a.overlaps(&c));
        assert!(DayRange::new(date("2025-02-02"), date("2025-02-01")).is_none());
    }
}
