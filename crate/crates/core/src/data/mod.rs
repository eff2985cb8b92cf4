//! Dataset files, their validation, and the model-ready view built from
//! them; plus the synthetic generator and report tables.

mod bundle;
mod report;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use bundle::{
    load_dataset, save_dataset, DatasetBundle, EdgeRow, EntityRow, NewsRow, PriceRow, EDGES_FILE, ENTITIES_FILE,
    FORMAT_VERSION, NEWS_FILE, PRICES_FILE, SPLITS_FILE,
};
pub use report::{
    load_backtest, load_metrics, load_table, save_backtest, save_metrics, save_table, EvalMetrics, Table,
    BACKTEST_DAYS_FILE, BACKTEST_SUMMARY_FILE, VALUE_CURVE_FILE,
};
pub use synthetic::{generate_synthetic, generate_synthetic_with_truth, EdgeCounts, SyntheticSpec, SyntheticTruth, SPILLOVER_KINDS};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, MarketGraph, TypedEdge};
use crate::signals::{RawDailyBar, SentimentCounts, StockSeries, TradingCalendar};

/// An entity left out of the prepared dataset, and why.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub kind: EntityKind,
    pub reason: String,
}

/// A validated bundle arranged for the model: dense indices, the graph
/// with meta relations, and per-stock aligned series.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub company_ids: Vec<String>,
    pub executive_ids: Vec<String>,
    pub graph: MarketGraph,
    pub series: Vec<StockSeries>,
    pub calendar: TradingCalendar,
    pub exclusions: Vec<Exclusion>,
}

impl Dataset {
    /// Companies without a bar on every calendar day are excluded, with
    /// their edges; executives left without any company go with them.
    pub fn from_bundle(bundle: &DatasetBundle) -> Result<Self> {
        let dates: BTreeSet<_> = bundle.prices.iter().map(|p| p.bar.date).collect();
        let calendar = TradingCalendar::new(dates.into_iter().collect(), bundle.splits)?;
        if calendar.len() < 2 {
            return Err(Error::Data(format!("calendar has {} day(s), need at least 2", calendar.len())));
        }

        let mut bars: HashMap<&str, Vec<RawDailyBar>> = HashMap::new();
        for p in &bundle.prices {
            bars.entry(p.stock.as_str()).or_default().push(p.bar);
        }
        let mut news: HashMap<&str, Vec<SentimentCounts>> = HashMap::new();
        for n in &bundle.news {
            news.entry(n.stock.as_str()).or_default().push(n.counts);
        }

        let mut exclusions = Vec::new();
        let mut company_ids = Vec::new();
        for e in bundle.entities.iter().filter(|e| e.kind == EntityKind::Company) {
            let have = bars.get(e.id.as_str()).map_or(0, Vec::len);
            if have == calendar.len() {
                company_ids.push(e.id.clone());
            } else {
                exclusions.push(Exclusion {
                    id: e.id.clone(),
                    kind: EntityKind::Company,
                    reason: format!("missing bars on {} of {} trading days", calendar.len() - have, calendar.len()),
                });
            }
        }
        if company_ids.is_empty() {
            return Err(Error::Data("no company has complete price coverage".into()));
        }
        let company_index: HashMap<&str, usize> =
            company_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

        // Executives survive if some inter-class edge reaches a kept company.
        let kinds: HashMap<&str, EntityKind> = bundle.entities.iter().map(|e| (e.id.as_str(), e.kind)).collect();
        let mut linked = BTreeSet::new();
        for e in bundle.edges.iter().filter(|e| e.kind.is_inter_class()) {
            let (c, x) = if kinds.get(e.src.as_str()) == Some(&EntityKind::Company) {
                (&e.src, &e.dst)
            } else {
                (&e.dst, &e.src)
            };
            if company_index.contains_key(c.as_str()) {
                linked.insert(x.as_str());
            }
        }
        let mut executive_ids = Vec::new();
        for e in bundle.entities.iter().filter(|e| e.kind == EntityKind::Executive) {
            if linked.contains(e.id.as_str()) {
                executive_ids.push(e.id.clone());
            } else {
                exclusions.push(Exclusion {
                    id: e.id.clone(),
                    kind: EntityKind::Executive,
                    reason: "every linked company was excluded".into(),
                });
            }
        }
        let exec_index: HashMap<&str, usize> =
            executive_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

        let resolve = |id: &str| {
            company_index
                .get(id)
                .map(|&i| EntityId::company(i))
                .or_else(|| exec_index.get(id).map(|&i| EntityId::executive(i)))
        };
        let edges: Vec<TypedEdge> = bundle
            .edges
            .iter()
            .filter_map(|e| Some(TypedEdge::new(e.kind, resolve(&e.src)?, resolve(&e.dst)?)))
            .collect();
        let graph = MarketGraph::build(company_ids.len(), executive_ids.len(), &edges)?.derive_meta_relations();
        graph.check_executives_linked()?;

        let mut series = Vec::with_capacity(company_ids.len());
        for id in &company_ids {
            let mut b = bars.remove(id.as_str()).unwrap_or_default();
            b.sort_by_key(|x| x.date);
            let n = news.remove(id.as_str()).unwrap_or_default();
            series.push(StockSeries::build(id, &b, &n)?);
        }

        Ok(Dataset { company_ids, executive_ids, graph, series, calendar, exclusions })
    }

    pub fn companies(&self) -> usize {
        self.company_ids.len()
    }

    /// `closes[stock][day]`, as the backtest expects.
    pub fn closes(&self) -> Vec<Vec<f64>> {
        self.series.iter().map(|s| s.closes.clone()).collect()
    }

    /// Labels of every stock on calendar day `day`.
    pub fn labels(&self, day: usize) -> Vec<u8> {
        self.series.iter().map(|s| s.labels[day]).collect()
    }

    /// Edge counts by relation kind, meta relations included.
    pub fn edge_counts(&self) -> BTreeMap<String, usize> {
        crate::graph::RelationKind::ALL
            .iter()
            .filter(|k| **k != crate::graph::RelationKind::Implicit)
            .map(|&k| (k.name().to_string(), self.graph.edge_count(k)))
            .collect()
    }
}
