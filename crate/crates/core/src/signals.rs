//! Daily market signals: technical indicators `p ∈ ℝ⁵`, sentiment
//! `q ∈ ℝ³`, movement labels and lookback windows.

use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trailing window, in trading days, of the volume-based turnover proxy.
pub const TURNOVER_WINDOW: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDailyBar {
    pub date: NaiveDate,
    pub open: f64,
    pub close: f64,
    pub high: f64,
    pub low: f64,
    pub volume: f64,
}

impl RawDailyBar {
    /// `low ≤ min(open, close) ≤ max(open, close) ≤ high`, `volume ≥ 0`,
    /// all finite.
    pub fn is_consistent(&self) -> bool {
        let fields = [self.open, self.close, self.high, self.low, self.volume];
        fields.iter().all(|x| x.is_finite())
            && self.low <= self.open.min(self.close)
            && self.open.max(self.close) <= self.high
            && self.volume >= 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentCounts {
    pub date: NaiveDate,
    pub n_pos: u32,
    pub n_neg: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DailySignals {
    /// Returns of open, close, high, low, then turnover.
    pub p: [f64; 5],
    /// Positive share, negative share, divergence.
    pub q: [f64; 3],
}

/// One-day percentage change of each price field plus the turnover proxy,
/// for days `1..bars.len()` (day 0 has no predecessor and is dropped).
pub fn transform_indicators(stock: &str, bars: &[RawDailyBar]) -> Result<Vec<[f64; 5]>> {
    if bars.len() < 2 {
        return Err(Error::Data(format!(
            "stock {stock}: need at least 2 bars, got {}",
            bars.len()
        )));
    }
    let mut out = Vec::with_capacity(bars.len() - 1);
    for t in 1..bars.len() {
        let (prev, cur) = (&bars[t - 1], &bars[t]);
        let fields = [
            (prev.open, cur.open),
            (prev.close, cur.close),
            (prev.high, cur.high),
            (prev.low, cur.low),
        ];
        let mut p = [0.0; 5];
        for (k, &(x0, x1)) in fields.iter().enumerate() {
            if !(x0 > 0.0) {
                return Err(Error::Data(format!(
                    "stock {stock}: non-positive price {x0} on {}",
                    prev.date
                )));
            }
            p[k] = (x1 - x0) / x0;
        }
        p[4] = turnover(bars, t);
        out.push(p);
    }
    Ok(out)
}

/// Volume over its trailing mean, window including day `t`, truncated at
/// the series start.
fn turnover(bars: &[RawDailyBar], t: usize) -> f64 {
    let start = (t + 1).saturating_sub(TURNOVER_WINDOW);
    let window = &bars[start..=t];
    let mean = window.iter().map(|b| b.volume).sum::<f64>() / window.len() as f64;
    if mean > 0.0 {
        bars[t].volume / mean
    } else {
        0.0
    }
}

/// `(N⁺, N⁻, N⁺−N⁻)/(N⁺+N⁻)`, or zeros on a day without news.
pub fn compute_sentiment(n_pos: u32, n_neg: u32) -> [f64; 3] {
    let total = n_pos as f64 + n_neg as f64;
    if total == 0.0 {
        return [0.0; 3];
    }
    let (pos, neg) = (n_pos as f64, n_neg as f64);
    [pos / total, neg / total, (pos - neg) / total]
}

/// 1 iff the close is strictly above the open.
pub fn label(bar: &RawDailyBar) -> u8 {
    u8::from(bar.close > bar.open)
}

/// Per-stock aligned signals and labels over the calendar.
#[derive(Clone, Debug, PartialEq)]
pub struct StockSeries {
    /// `signals[d]` for calendar day `d`; day 0 is a placeholder.
    pub signals: Vec<DailySignals>,
    pub labels: Vec<u8>,
    pub closes: Vec<f64>,
}

impl StockSeries {
    /// `bars` must cover the calendar; `news` may be sparse and unordered.
    pub fn build(stock: &str, bars: &[RawDailyBar], news: &[SentimentCounts]) -> Result<Self> {
        let p = transform_indicators(stock, bars)?;
        let mut signals = vec![DailySignals::default(); bars.len()];
        for (d, pv) in p.into_iter().enumerate() {
            signals[d + 1].p = pv;
        }
        for n in news {
            if let Ok(d) = bars.binary_search_by_key(&n.date, |b| b.date) {
                signals[d].q = compute_sentiment(n.n_pos, n.n_neg);
            }
        }
        Ok(StockSeries {
            signals,
            labels: bars.iter().map(label).collect(),
            closes: bars.iter().map(|b| b.close).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

/// First target day with a full window of `lookback` days: windows cover
/// days `t−T..t−1` and day 0 carries no indicators.
pub fn first_eligible_day(lookback: usize) -> usize {
    lookback + 1
}

/// Signals for days `t−T .. t−1`, oldest first.
pub fn build_window(series: &StockSeries, t: usize, lookback: usize) -> Result<&[DailySignals]> {
    if lookback == 0 {
        return Err(Error::Window("lookback must be at least 1".into()));
    }
    if t < first_eligible_day(lookback) || t >= series.len() {
        return Err(Error::Window(format!(
            "day {t} with lookback {lookback} over {} days",
            series.len()
        )));
    }
    Ok(&series.signals[t - lookback..t])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Inclusive date ranges of the three periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: (NaiveDate, NaiveDate),
    pub valid: (NaiveDate, NaiveDate),
    pub test: (NaiveDate, NaiveDate),
}

impl Default for Splits {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Splits {
            train: (d(2017, 11, 21), d(2019, 8, 5)),
            valid: (d(2019, 8, 6), d(2019, 10, 22)),
            test: (d(2019, 10, 23), d(2019, 12, 31)),
        }
    }
}

impl Splits {
    pub fn range(&self, split: Split) -> (NaiveDate, NaiveDate) {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self.train.0 <= self.train.1
            && self.train.1 < self.valid.0
            && self.valid.0 <= self.valid.1
            && self.valid.1 < self.test.0
            && self.test.0 <= self.test.1;
        if ordered {
            Ok(())
        } else {
            Err(Error::Data(format!("split periods overlap or are unordered: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
    splits: Splits,
}

impl TradingCalendar {
    pub fn new(dates: Vec<NaiveDate>, splits: Splits) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("calendar dates are not strictly increasing".into()));
        }
        splits.validate()?;
        Ok(TradingCalendar { dates, splits })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Calendar indices falling inside a split period.
    pub fn split_days(&self, split: Split) -> Range<usize> {
        let (lo, hi) = self.splits.range(split);
        let start = self.dates.partition_point(|d| *d < lo);
        let end = self.dates.partition_point(|d| *d <= hi);
        start..end.max(start)
    }

    /// Split days that have a full lookback window.
    pub fn eligible_days(&self, split: Split, lookback: usize) -> Range<usize> {
        let r = self.split_days(split);
        r.start.max(first_eligible_day(lookback))..r.end.max(first_eligible_day(lookback))
    }
}
