//! Synthetic market with a planted spillover signal.
//!
//! Each company's up/down label on day `t` is drawn from a logistic model
//! whose log-odds grow with the previous day's returns of its graph
//! neighbors, so a model that sees the graph can predict labels and a
//! model restricted to each stock's own history cannot.
//!
//! Three channels feed the signal, each read on day `t−1`:
//! economic-link neighbors (cross-sectionally demeaned returns), meta-relation
//! neighbors (likewise), and a handful of hidden "leader" companies whose
//! raw mean return moves every other company. Leaders have no edges of
//! their own to the companies they move; only a learned implicit relation
//! can find them. Industry peers are linked in the graph but pass nothing
//! on, so telling relation kinds apart pays off.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::bundle::{DatasetBundle, EdgeRow, EntityRow, NewsRow, PriceRow};
use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, MarketGraph, RelationKind, TypedEdge};
use crate::signals::{RawDailyBar, SentimentCounts, Splits};

/// Standard deviation of the intraday move.
const INTRADAY_SD: f64 = 0.005;
/// Standard deviation of the overnight gap. Exogenous gaps dominate the
/// close-to-close return, so what a stock passes to its neighbors barely
/// echoes back into its own later labels; otherwise its own history
/// would predict it through the symmetric graph.
const GAP_SD: f64 = 0.02;
const WICK_SD: f64 = 0.003;
/// Chance that a non-leader has news on a given day.
const NEWS_RATE: f64 = 0.25;
const MAX_ARTICLES: u32 = 8;

/// Explicit relations that carry lagged spillover. Industry membership is
/// left out: it drives co-movement on the same day, not lead-lag.
pub const SPILLOVER_KINDS: [RelationKind; 3] =
    [RelationKind::SupplyChain, RelationKind::BusinessPartnership, RelationKind::Investment];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeCounts {
    pub industry_category: usize,
    pub supply_chain: usize,
    pub business_partnership: usize,
    pub investment: usize,
    /// At least one per executive; the first of each is assigned so that
    /// no executive is left unlinked.
    pub management: usize,
    pub exec_investment: usize,
    pub classmate: usize,
    pub colleague: usize,
}

impl Default for EdgeCounts {
    fn default() -> Self {
        EdgeCounts {
            industry_category: 272,
            supply_chain: 27,
            business_partnership: 98,
            investment: 7,
            management: 166,
            exec_investment: 1,
            classmate: 38,
            colleague: 106,
        }
    }
}

impl EdgeCounts {
    pub fn get(&self, kind: RelationKind) -> usize {
        match kind {
            RelationKind::IndustryCategory => self.industry_category,
            RelationKind::SupplyChain => self.supply_chain,
            RelationKind::BusinessPartnership => self.business_partnership,
            RelationKind::Investment => self.investment,
            RelationKind::Management => self.management,
            RelationKind::ExecInvestment => self.exec_investment,
            RelationKind::Classmate => self.classmate,
            RelationKind::Colleague => self.colleague,
            _ => 0,
        }
    }

    /// Loadable kinds in generation order.
    pub const KINDS: [RelationKind; 8] = [
        RelationKind::IndustryCategory,
        RelationKind::SupplyChain,
        RelationKind::BusinessPartnership,
        RelationKind::Investment,
        RelationKind::Management,
        RelationKind::ExecInvestment,
        RelationKind::Classmate,
        RelationKind::Colleague,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub companies: usize,
    pub executives: usize,
    pub edges: EdgeCounts,
    /// Hidden companies whose mean return drives all others.
    pub leaders: usize,
    /// Spillover coefficient in `[0, 1]`.
    pub lambda: f64,
    /// Log-odds per standard deviation of neighbor return.
    pub scale: f64,
    /// Scale of the logistic noise added to the log-odds.
    pub noise: f64,
    pub seed: u64,
    /// Weekday calendar bounds, inclusive.
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub splits: Splits,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let splits = Splits::default();
        SyntheticSpec {
            companies: 73,
            executives: 163,
            edges: EdgeCounts::default(),
            leaders: 5,
            lambda: 0.9,
            scale: 9.0,
            noise: 1.0,
            seed: 7,
            start: splits.train.0,
            end: splits.test.1,
            splits,
        }
    }
}

impl SyntheticSpec {
    /// Parses TOML; missing keys take defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::Spec(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Reads a spec file; an empty file gives the defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Spec(m) => Error::Spec(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.companies < 2 {
            return err(format!("need at least 2 companies, got {}", self.companies));
        }
        if self.executives == 0 {
            return err("need at least 1 executive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return err(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return err(format!("scale must be finite and non-negative, got {}", self.scale));
        }
        if self.leaders >= self.companies {
            return err(format!("{} leaders leave no other company", self.leaders));
        }
        if self.start >= self.end {
            return err(format!("calendar start {} is not before end {}", self.start, self.end));
        }
        self.splits.validate().map_err(|e| Error::Spec(e.to_string()))?;
        for kind in EdgeCounts::KINDS {
            let want = self.edges.get(kind);
            let cap = pair_capacity(kind, self.companies, self.executives);
            if want > cap {
                return err(format!("{want} {kind} edges requested but only {cap} pairs exist"));
            }
        }
        if self.edges.management < self.executives {
            return err(format!(
                "{} management edges cannot link all {} executives",
                self.edges.management, self.executives
            ));
        }
        Ok(())
    }
}

fn pair_capacity(kind: RelationKind, n: usize, e: usize) -> usize {
    match kind.signature() {
        (EntityKind::Company, EntityKind::Company) => n * (n - 1) / 2,
        (EntityKind::Executive, EntityKind::Executive) => e * e.saturating_sub(1) / 2,
        _ => n * e,
    }
}

/// What the generator planted, for tests.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    /// Leader company indices, ascending.
    pub leaders: Vec<usize>,
    /// `signal[day][company]`: the neighbor signal `m` behind each label.
    pub signal: Vec<Vec<f64>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    generate_synthetic_with_truth(spec).map(|(b, _)| b)
}

fn weekdays(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

/// `k` distinct pairs drawn from `universe`, in universe order.
fn draw<R: Rng>(rng: &mut R, universe: &[(usize, usize)], k: usize) -> Vec<(usize, usize)> {
    let mut idx = sample(rng, universe.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| universe[i]).collect()
}

fn same_type_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

fn neighbor_lists(graph: &MarketGraph, kinds: &[RelationKind]) -> Vec<Vec<usize>> {
    let mut sets = vec![BTreeSet::new(); graph.company_count()];
    for &k in kinds {
        for (a, b) in graph.directed_pairs(k) {
            sets[a].insert(b);
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn mean_of(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&j| values[j]).sum::<f64>() / idx.len() as f64
}

pub fn generate_synthetic_with_truth(spec: &SyntheticSpec) -> Result<(DatasetBundle, SyntheticTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, ne) = (spec.companies, spec.executives);
    let company_id = |i: usize| format!("C{i:03}");
    let exec_id = |i: usize| format!("E{i:03}");

    // Graph.
    let company_pairs = same_type_pairs(n);
    let exec_pairs = same_type_pairs(ne);
    let inter_pairs: Vec<(usize, usize)> = (0..n).flat_map(|c| (0..ne).map(move |e| (c, e))).collect();
    let mut typed = Vec::new();
    for kind in EdgeCounts::KINDS {
        let want = spec.edges.get(kind);
        let pairs = match kind {
            RelationKind::Management => {
                let mut first: BTreeSet<(usize, usize)> =
                    (0..ne).map(|e| (rng.random_range(0..n), e)).collect();
                let rest: Vec<_> = inter_pairs.iter().copied().filter(|p| !first.contains(p)).collect();
                first.extend(draw(&mut rng, &rest, want - ne));
                first.into_iter().collect()
            }
            k if k.is_inter_class() => draw(&mut rng, &inter_pairs, want),
            RelationKind::Classmate | RelationKind::Colleague => draw(&mut rng, &exec_pairs, want),
            _ => draw(&mut rng, &company_pairs, want),
        };
        let (ta, tb) = kind.signature();
        typed.extend(
            pairs
                .into_iter()
                .map(|(a, b)| TypedEdge::new(kind, EntityId { kind: ta, index: a }, EntityId { kind: tb, index: b })),
        );
    }
    let graph = MarketGraph::build(n, ne, &typed)
        .map_err(|e| Error::Spec(format!("generated graph is invalid: {e}")))?
        .derive_meta_relations();
    let explicit = neighbor_lists(&graph, &SPILLOVER_KINDS);
    let meta = neighbor_lists(&graph, &[RelationKind::Cec, RelationKind::Ceec]);
    let mut leaders: Vec<usize> = sample(&mut rng, n, spec.leaders).into_vec();
    leaders.sort_unstable();
    let is_leader: Vec<bool> = (0..n).map(|i| leaders.binary_search(&i).is_ok()).collect();

    // Prices.
    let dates = weekdays(spec.start, spec.end);
    let intraday = Normal::new(0.0, INTRADAY_SD).expect("valid normal");
    let gap = Normal::new(0.0, GAP_SD).expect("valid normal");
    let wick = Normal::new(0.0, WICK_SD).expect("valid normal");
    let volume = LogNormal::new(13.0, 0.5).expect("valid lognormal");
    let sigma_r = (INTRADAY_SD * INTRADAY_SD + GAP_SD * GAP_SD).sqrt();

    let mut close: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..60.0)).collect();
    let mut prev_ret = vec![0.0; n];
    let mut bars = vec![Vec::with_capacity(dates.len()); n];
    let mut returns = Vec::with_capacity(dates.len());
    let mut signal = Vec::with_capacity(dates.len());
    for (d, &date) in dates.iter().enumerate() {
        let xs_mean = prev_ret.iter().sum::<f64>() / n as f64;
        let demeaned: Vec<f64> = prev_ret.iter().map(|r| r - xs_mean).collect();
        let leader_mean = if leaders.is_empty() { 0.0 } else { mean_of(&prev_ret, &leaders) };
        let mut m_day = Vec::with_capacity(n);
        let mut ret_day = Vec::with_capacity(n);
        for i in 0..n {
            let mut channels = Vec::with_capacity(3);
            if !explicit[i].is_empty() {
                channels.push(mean_of(&demeaned, &explicit[i]));
            }
            if !meta[i].is_empty() {
                channels.push(mean_of(&demeaned, &meta[i]));
            }
            if !is_leader[i] && !leaders.is_empty() {
                channels.push(leader_mean);
            }
            let m = if channels.is_empty() { 0.0 } else { channels.iter().sum::<f64>() / channels.len() as f64 };
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let logit = spec.lambda * spec.scale * m / sigma_r + spec.noise * (u / (1.0 - u)).ln();
            let up = if logit == 0.0 { rng.random_bool(0.5) } else { logit > 0.0 };

            let mag = intraday.sample(&mut rng).abs();
            let open = close[i] * (1.0 + gap.sample(&mut rng));
            let c = open * if up { 1.0 + mag } else { 1.0 - mag.min(0.5) };
            let high = open.max(c) * (1.0 + wick.sample(&mut rng).abs());
            let low = open.min(c) * (1.0 - wick.sample(&mut rng).abs().min(0.5));
            bars[i].push(RawDailyBar { date, open, close: c, high, low, volume: volume.sample(&mut rng) });
            // day 0 has no observable predecessor
            ret_day.push(if d == 0 { 0.0 } else { c / close[i] - 1.0 });
            close[i] = c;
            m_day.push(m);
        }
        prev_ret.clone_from(&ret_day);
        returns.push(ret_day);
        signal.push(m_day);
    }

    // News, drawn after prices so the price path does not depend on it.
    let mut news = vec![Vec::new(); n];
    for (d, &date) in dates.iter().enumerate() {
        for i in 0..n {
            if !is_leader[i] && !rng.random_bool(NEWS_RATE) {
                continue;
            }
            let total = rng.random_range(1..=MAX_ARTICLES);
            let share = 0.5 + 0.3 * returns[d][i].signum();
            let n_pos = Binomial::new(u64::from(total), share).expect("valid binomial").sample(&mut rng) as u32;
            news[i].push(SentimentCounts { date, n_pos, n_neg: total - n_pos });
        }
    }

    let mut entities: Vec<EntityRow> = (0..n)
        .map(|i| EntityRow { id: company_id(i), kind: EntityKind::Company, name: format!("Company {i}") })
        .collect();
    entities.extend(
        (0..ne).map(|i| EntityRow { id: exec_id(i), kind: EntityKind::Executive, name: format!("Executive {i}") }),
    );
    let name_of = |e: EntityId| match e.kind {
        EntityKind::Company => company_id(e.index),
        EntityKind::Executive => exec_id(e.index),
    };
    let edges = typed.iter().map(|e| EdgeRow { kind: e.kind, src: name_of(e.a), dst: name_of(e.b) }).collect();
    let prices = bars
        .into_iter()
        .enumerate()
        .flat_map(|(i, bs)| bs.into_iter().map(move |bar| PriceRow { stock: company_id(i), bar }))
        .collect();
    let news = news
        .into_iter()
        .enumerate()
        .flat_map(|(i, ns)| ns.into_iter().map(move |counts| NewsRow { stock: company_id(i), counts }))
        .collect();
    let bundle = DatasetBundle { entities, edges, prices, news, splits: spec.splits };
    Ok((bundle, SyntheticTruth { leaders, signal }))
}
