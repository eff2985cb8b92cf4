//! The on-disk dataset: four CSV tables plus an optional split table,
//! each starting with a `#format=<name>/<version>` line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityKind, RelationKind};
use crate::signals::{RawDailyBar, SentimentCounts, Split, Splits};

pub const ENTITIES_FILE: &str = "entities.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const PRICES_FILE: &str = "prices.csv";
pub const NEWS_FILE: &str = "news.csv";
pub const SPLITS_FILE: &str = "splits.csv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRow {
    pub id: String,
    pub kind: EntityKind,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub kind: RelationKind,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub stock: String,
    pub bar: RawDailyBar,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsRow {
    pub stock: String,
    pub counts: SentimentCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub entities: Vec<EntityRow>,
    pub edges: Vec<EdgeRow>,
    pub prices: Vec<PriceRow>,
    pub news: Vec<NewsRow>,
    pub splits: Splits,
}

/// A location for error messages: file name and 1-based line.
#[derive(Clone, Copy, Debug)]
struct At<'a> {
    file: &'a str,
    line: u64,
}

impl At<'_> {
    fn err(self, msg: impl std::fmt::Display) -> Error {
        Error::Data(format!("{}:{}: {msg}", self.file, self.line))
    }
}

fn format_line(name: &str) -> String {
    format!("#format={name}/{FORMAT_VERSION}")
}

/// Reads a versioned table, returning `(line, record)` pairs.
fn read_table(dir: &Path, file: &str, name: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_table(&text, file, name, header)
}

fn parse_table(text: &str, file: &str, name: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let expected = format_line(name);
    if first.trim_end() != expected {
        return Err(At { file, line: 1 }.err(format!("expected `{expected}`, found `{}`", first.trim_end())));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let got = rdr
        .headers()
        .map_err(|e| At { file, line: 2 }.err(e))?
        .clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(At { file, line: 2 }.err(format!("expected columns {header:?}, found {:?}", got.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() + 1);
            At { file, line }.err(e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        out.push((line, rec));
    }
    Ok(out)
}

fn write_table(dir: &Path, file: &str, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut buf = format!("{}\n", format_line(name)).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Error::Data(format!("{file}: {e}"));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(&r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(dir.join(file), e))?;
    }
    let path = dir.join(file);
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))
}

fn parse_date(s: &str, at: At) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| at.err(format!("bad date `{s}`: {e}")))
}

fn parse_num<N: std::str::FromStr>(s: &str, field: &str, at: At) -> Result<N>
where
    N::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| at.err(format!("bad {field} `{s}`: {e}")))
}

const ENTITY_HEADER: [&str; 3] = ["id", "kind", "name"];
const EDGE_HEADER: [&str; 3] = ["kind", "src", "dst"];
const PRICE_HEADER: [&str; 7] = ["stock", "date", "open", "close", "high", "low", "volume"];
const NEWS_HEADER: [&str; 4] = ["stock", "date", "n_pos", "n_neg"];
const SPLIT_HEADER: [&str; 3] = ["split", "start", "end"];

/// Line numbers of each row, by table, for validation messages.
#[derive(Default)]
struct Lines {
    entities: Vec<u64>,
    edges: Vec<u64>,
    prices: Vec<u64>,
    news: Vec<u64>,
}

impl Lines {
    /// Header and format lines precede the first data row.
    fn implicit(b: &DatasetBundle) -> Self {
        let seq = |n: usize| (0..n as u64).map(|i| i + 3).collect();
        Lines {
            entities: seq(b.entities.len()),
            edges: seq(b.edges.len()),
            prices: seq(b.prices.len()),
            news: seq(b.news.len()),
        }
    }
}

/// Reads and validates a dataset directory. The split table is optional;
/// without it the default periods apply.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let mut lines = Lines::default();

    let mut entities = Vec::new();
    for (line, r) in read_table(dir, ENTITIES_FILE, "entities", &ENTITY_HEADER)? {
        let at = At { file: ENTITIES_FILE, line };
        let kind = match &r[1] {
            "company" => EntityKind::Company,
            "executive" => EntityKind::Executive,
            other => return Err(at.err(format!("unknown entity kind `{other}`"))),
        };
        entities.push(EntityRow { id: r[0].to_string(), kind, name: r[2].to_string() });
        lines.entities.push(line);
    }

    let mut edges = Vec::new();
    for (line, r) in read_table(dir, EDGES_FILE, "edges", &EDGE_HEADER)? {
        let at = At { file: EDGES_FILE, line };
        let kind = RelationKind::parse(&r[0]).ok_or_else(|| at.err(format!("unknown relation kind `{}`", &r[0])))?;
        edges.push(EdgeRow { kind, src: r[1].to_string(), dst: r[2].to_string() });
        lines.edges.push(line);
    }

    let mut prices = Vec::new();
    for (line, r) in read_table(dir, PRICES_FILE, "prices", &PRICE_HEADER)? {
        let at = At { file: PRICES_FILE, line };
        let bar = RawDailyBar {
            date: parse_date(&r[1], at)?,
            open: parse_num(&r[2], "open", at)?,
            close: parse_num(&r[3], "close", at)?,
            high: parse_num(&r[4], "high", at)?,
            low: parse_num(&r[5], "low", at)?,
            volume: parse_num(&r[6], "volume", at)?,
        };
        prices.push(PriceRow { stock: r[0].to_string(), bar });
        lines.prices.push(line);
    }

    let mut news = Vec::new();
    for (line, r) in read_table(dir, NEWS_FILE, "news", &NEWS_HEADER)? {
        let at = At { file: NEWS_FILE, line };
        let counts = SentimentCounts {
            date: parse_date(&r[1], at)?,
            n_pos: parse_num(&r[2], "n_pos", at)?,
            n_neg: parse_num(&r[3], "n_neg", at)?,
        };
        news.push(NewsRow { stock: r[0].to_string(), counts });
        lines.news.push(line);
    }

    let splits = if dir.join(SPLITS_FILE).exists() {
        let mut found: BTreeMap<&'static str, (NaiveDate, NaiveDate)> = BTreeMap::new();
        for (line, r) in read_table(dir, SPLITS_FILE, "splits", &SPLIT_HEADER)? {
            let at = At { file: SPLITS_FILE, line };
            let split = Split::parse(&r[0]).ok_or_else(|| at.err(format!("unknown split `{}`", &r[0])))?;
            let range = (parse_date(&r[1], at)?, parse_date(&r[2], at)?);
            if found.insert(split.name(), range).is_some() {
                return Err(at.err(format!("split `{}` listed twice", split.name())));
            }
        }
        let get = |s: Split| {
            found
                .get(s.name())
                .copied()
                .ok_or_else(|| Error::Data(format!("{SPLITS_FILE}: missing split `{}`", s.name())))
        };
        Splits { train: get(Split::Train)?, valid: get(Split::Valid)?, test: get(Split::Test)? }
    } else {
        Splits::default()
    };

    let bundle = DatasetBundle { entities, edges, prices, news, splits };
    validate(&bundle, &lines)?;
    Ok(bundle)
}

/// Writes the five tables into `dir`, creating it if needed.
pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_table(
        dir,
        ENTITIES_FILE,
        "entities",
        &ENTITY_HEADER,
        bundle.entities.iter().map(|e| vec![e.id.clone(), e.kind.to_string(), e.name.clone()]),
    )?;
    write_table(
        dir,
        EDGES_FILE,
        "edges",
        &EDGE_HEADER,
        bundle.edges.iter().map(|e| vec![e.kind.name().to_string(), e.src.clone(), e.dst.clone()]),
    )?;
    write_table(
        dir,
        PRICES_FILE,
        "prices",
        &PRICE_HEADER,
        bundle.prices.iter().map(|p| {
            let b = &p.bar;
            vec![
                p.stock.clone(),
                b.date.to_string(),
                b.open.to_string(),
                b.close.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.volume.to_string(),
            ]
        }),
    )?;
    write_table(
        dir,
        NEWS_FILE,
        "news",
        &NEWS_HEADER,
        bundle.news.iter().map(|n| {
            vec![n.stock.clone(), n.counts.date.to_string(), n.counts.n_pos.to_string(), n.counts.n_neg.to_string()]
        }),
    )?;
    write_table(
        dir,
        SPLITS_FILE,
        "splits",
        &SPLIT_HEADER,
        Split::ALL.iter().map(|&s| {
            let (a, b) = bundle.splits.range(s);
            vec![s.name().to_string(), a.to_string(), b.to_string()]
        }),
    )
}

impl DatasetBundle {
    /// Referential and schema checks, as performed on load.
    pub fn validate(&self) -> Result<()> {
        validate(self, &Lines::implicit(self))
    }
}

fn validate(b: &DatasetBundle, lines: &Lines) -> Result<()> {
    let mut kinds: HashMap<&str, EntityKind> = HashMap::new();
    for (e, &line) in b.entities.iter().zip(&lines.entities) {
        let at = At { file: ENTITIES_FILE, line };
        if e.id.is_empty() {
            return Err(at.err("empty entity id"));
        }
        if kinds.insert(&e.id, e.kind).is_some() {
            return Err(at.err(format!("duplicate entity id `{}`", e.id)));
        }
    }

    let mut seen_edges = HashSet::new();
    let mut linked_execs: HashSet<&str> = HashSet::new();
    for (e, &line) in b.edges.iter().zip(&lines.edges) {
        let at = At { file: EDGES_FILE, line };
        if !e.kind.is_loadable() {
            return Err(at.err(format!("`{}` edges are derived, not loaded", e.kind)));
        }
        let ks = kinds.get(e.src.as_str()).ok_or_else(|| at.err(format!("undeclared entity `{}`", e.src)))?;
        let kd = kinds.get(e.dst.as_str()).ok_or_else(|| at.err(format!("undeclared entity `{}`", e.dst)))?;
        let (ta, tb) = e.kind.signature();
        let (c, x) = match (*ks, *kd) {
            (a, b) if a == ta && b == tb => (e.src.as_str(), e.dst.as_str()),
            (a, b) if a == tb && b == ta => (e.dst.as_str(), e.src.as_str()),
            _ => return Err(at.err(format!("{} edge between {ks} and {kd}", e.kind))),
        };
        if c == x {
            return Err(at.err(format!("{} self-loop on `{c}`", e.kind)));
        }
        let key = if ta == tb { (e.kind, c.min(x), c.max(x)) } else { (e.kind, c, x) };
        if !seen_edges.insert(key) {
            return Err(at.err(format!("duplicate {} edge `{}` – `{}`", e.kind, e.src, e.dst)));
        }
        if e.kind.is_inter_class() {
            linked_execs.insert(x);
        }
    }
    for (e, &line) in b.entities.iter().zip(&lines.entities) {
        if e.kind == EntityKind::Executive && !linked_execs.contains(e.id.as_str()) {
            return Err(At { file: ENTITIES_FILE, line }.err(format!("executive `{}` has no company link", e.id)));
        }
    }

    let company = |id: &str, at: At| match kinds.get(id) {
        Some(EntityKind::Company) => Ok(()),
        Some(k) => Err(at.err(format!("`{id}` is a {k}, not a company"))),
        None => Err(at.err(format!("undeclared stock `{id}`"))),
    };
    let mut bar_dates = HashSet::new();
    for (p, &line) in b.prices.iter().zip(&lines.prices) {
        let at = At { file: PRICES_FILE, line };
        company(&p.stock, at)?;
        if !p.bar.is_consistent() || !(p.bar.open > 0.0) {
            return Err(at.err(format!("inconsistent bar for `{}` on {}", p.stock, p.bar.date)));
        }
        if !bar_dates.insert((p.stock.as_str(), p.bar.date)) {
            return Err(at.err(format!("second bar for `{}` on {}", p.stock, p.bar.date)));
        }
    }
    let mut news_dates = HashSet::new();
    for (n, &line) in b.news.iter().zip(&lines.news) {
        let at = At { file: NEWS_FILE, line };
        company(&n.stock, at)?;
        if !bar_dates.contains(&(n.stock.as_str(), n.counts.date)) {
            return Err(at.err(format!("news for `{}` on {} without a price bar", n.stock, n.counts.date)));
        }
        if !news_dates.insert((n.stock.as_str(), n.counts.date)) {
            return Err(at.err(format!("second news row for `{}` on {}", n.stock, n.counts.date)));
        }
    }
    b.splits.validate()
}
