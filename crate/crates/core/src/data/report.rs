//! Report files: small versioned CSV tables that read back exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{BacktestDay, BacktestReport};

pub const BACKTEST_SUMMARY_FILE: &str = "backtest_summary.csv";
pub const BACKTEST_DAYS_FILE: &str = "backtest_days.csv";
pub const VALUE_CURVE_FILE: &str = "value_curve.csv";

/// A named table with a header row. Cells are strings; floats are written
/// in shortest round-trip form so a table re-reads bit for bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("table {}: no column `{name}`", self.name)))
    }

    /// Rows of a two-column key/value table.
    fn value(&self, key: &str) -> Result<&str> {
        self.rows
            .iter()
            .find(|r| r.first().map(String::as_str) == Some(key))
            .and_then(|r| r.get(1))
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("table {}: no entry `{key}`", self.name)))
    }
}

pub fn save_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("#format={}/{}\n", table.name, super::FORMAT_VERSION).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        w.write_record(&table.header).map_err(err)?;
        for r in &table.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`save_table`], checking its format line.
pub fn load_table(path: impl AsRef<Path>, name: &str) -> Result<Table> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let expected = format!("#format={name}/{}", super::FORMAT_VERSION);
    if first.trim_end() != expected {
        return Err(Error::Data(format!("{}:1: expected `{expected}`", path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let header = rdr.headers().map_err(err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec.map_err(err)?.iter().map(str::to_string).collect());
    }
    Ok(Table { name: name.into(), header, rows })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|e| Error::Data(format!("bad {what} `{s}`: {e}")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what).map(Some)
    }
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse().map_err(|e| Error::Data(format!("bad {what} `{s}`: {e}")))
}

/// Classification metrics over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub split: String,
    pub days: usize,
    pub samples: usize,
    pub da: f64,
    /// Undefined when a split has a single class.
    pub pr_auc: Option<f64>,
    pub roc_auc: Option<f64>,
}

impl EvalMetrics {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new("metrics", &["metric", "value"]);
        t.push(vec!["split".into(), self.split.clone()]);
        t.push(vec!["days".into(), self.days.to_string()]);
        t.push(vec!["samples".into(), self.samples.to_string()]);
        t.push(vec!["da".into(), self.da.to_string()]);
        t.push(vec!["pr_auc".into(), opt(self.pr_auc)]);
        t.push(vec!["roc_auc".into(), opt(self.roc_auc)]);
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        Ok(EvalMetrics {
            split: t.value("split")?.to_string(),
            days: parse_usize(t.value("days")?, "days")?,
            samples: parse_usize(t.value("samples")?, "samples")?,
            da: parse_f64(t.value("da")?, "da")?,
            pr_auc: parse_opt(t.value("pr_auc")?, "pr_auc")?,
            roc_auc: parse_opt(t.value("roc_auc")?, "roc_auc")?,
        })
    }
}

pub fn save_metrics(m: &EvalMetrics, path: impl AsRef<Path>) -> Result<()> {
    save_table(&m.to_table(), path)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<EvalMetrics> {
    EvalMetrics::from_table(&load_table(path, "metrics")?)
}

/// Writes the summary, per-day and value-curve tables into `dir`.
pub fn save_backtest(report: &BacktestReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut s = Table::new("backtest_summary", &["metric", "value"]);
    for (k, v) in [
        ("budget", report.budget.to_string()),
        ("final_value", report.final_value.to_string()),
        ("irr", report.irr.to_string()),
        ("raw_irr", report.raw_irr.to_string()),
        ("sharpe", opt(report.sharpe)),
        ("da", report.da.to_string()),
        ("pr_auc", opt(report.pr_auc)),
        ("roc_auc", opt(report.roc_auc)),
    ] {
        s.push(vec![k.into(), v]);
    }
    save_table(&s, dir.join(BACKTEST_SUMMARY_FILE))?;

    let mut d = Table::new("backtest_days", &["day", "selected", "raw_return", "portfolio_return", "value_after"]);
    for day in &report.days {
        let sel: Vec<String> = day.selected.iter().map(usize::to_string).collect();
        d.push(vec![
            day.day.to_string(),
            sel.join(" "),
            day.raw_return.to_string(),
            day.portfolio_return.to_string(),
            day.value_after.to_string(),
        ]);
    }
    save_table(&d, dir.join(BACKTEST_DAYS_FILE))?;

    let mut v = Table::new("value_curve", &["step", "value"]);
    for (k, x) in report.value_curve.iter().enumerate() {
        v.push(vec![k.to_string(), x.to_string()]);
    }
    save_table(&v, dir.join(VALUE_CURVE_FILE))
}

pub fn load_backtest(dir: impl AsRef<Path>) -> Result<BacktestReport> {
    let dir = dir.as_ref();
    let s = load_table(dir.join(BACKTEST_SUMMARY_FILE), "backtest_summary")?;
    let d = load_table(dir.join(BACKTEST_DAYS_FILE), "backtest_days")?;
    let v = load_table(dir.join(VALUE_CURVE_FILE), "value_curve")?;

    let cols = ["day", "selected", "raw_return", "portfolio_return", "value_after"].map(|c| d.column(c));
    let [c_day, c_sel, c_raw, c_port, c_val] = cols;
    let (c_day, c_sel, c_raw, c_port, c_val) = (c_day?, c_sel?, c_raw?, c_port?, c_val?);
    let mut days = Vec::with_capacity(d.rows.len());
    for r in &d.rows {
        let selected = r[c_sel]
            .split_whitespace()
            .map(|x| parse_usize(x, "selected"))
            .collect::<Result<Vec<_>>>()?;
        days.push(BacktestDay {
            day: parse_usize(&r[c_day], "day")?,
            selected,
            raw_return: parse_f64(&r[c_raw], "raw_return")?,
            portfolio_return: parse_f64(&r[c_port], "portfolio_return")?,
            value_after: parse_f64(&r[c_val], "value_after")?,
        });
    }
    let c_v = v.column("value")?;
    let value_curve = v.rows.iter().map(|r| parse_f64(&r[c_v], "value")).collect::<Result<_>>()?;

    Ok(BacktestReport {
        budget: parse_f64(s.value("budget")?, "budget")?,
        days,
        value_curve,
        final_value: parse_f64(s.value("final_value")?, "final_value")?,
        irr: parse_f64(s.value("irr")?, "irr")?,
        raw_irr: parse_f64(s.value("raw_irr")?, "raw_irr")?,
        sharpe: parse_opt(s.value("sharpe")?, "sharpe")?,
        da: parse_f64(s.value("da")?, "da")?,
        pr_auc: parse_opt(s.value("pr_auc")?, "pr_auc")?,
        roc_auc: parse_opt(s.value("roc_auc")?, "roc_auc")?,
    })
}
