//! Classification and trading metrics, and the top-k daily backtest.

use serde::{Deserialize, Serialize};

use crate::data::EvalMetrics;
use crate::error::{Error, Result};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub top_k: usize,
    pub budget: f64,
    /// Charged on the whole portfolio every day.
    pub cost_rate: f64,
    pub risk_free_annual: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            top_k: 15,
            budget: 10_000.0,
            cost_rate: 0.0003,
            risk_free_annual: 0.015,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self, stocks: usize) -> Result<()> {
        if self.top_k == 0 || self.top_k > stocks {
            return Err(Error::Config(format!("top_k {} with {stocks} stocks", self.top_k)));
        }
        let rates = [self.cost_rate, self.risk_free_annual];
        if !(self.budget > 0.0) || rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("invalid backtest config {self:?}")));
        }
        Ok(())
    }
}

fn check_aligned(scores: &[f64], labels: &[u8], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::contract(format!("{what}: empty input")));
    }
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{what}: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn class_counts(labels: &[u8], what: &str) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!("{what} needs both classes")));
    }
    Ok((pos, neg))
}

/// Share of cases where `up_prob > 0.5` agrees with the label.
pub fn directional_accuracy(up_probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_aligned(up_probs, labels, "directional_accuracy")?;
    let hits = up_probs
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| u8::from(p > 0.5) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Indices sorted by descending score; ties by ascending index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Area under the precision-recall curve as average precision
/// `Σ (R_k − R_{k−1})·P_k`, with tied scores forming one threshold.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_aligned(scores, labels, "auc_pr")?;
    let (pos, _) = class_counts(labels, "auc_pr")?;
    let order = ranked(scores);
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += usize::from(labels[order[k]] == 1);
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Area under the ROC curve via the rank-sum statistic with midranks for
/// ties (equal to the trapezoidal area).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_aligned(scores, labels, "auc_roc")?;
    let (pos, neg) = class_counts(labels, "auc_roc")?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j < idx.len() && scores[idx[j]] == scores[idx[k]] {
            j += 1;
        }
        // Ranks k+1 ..= j share their mean.
        let mid = (k + 1 + j) as f64 / 2.0;
        rank_sum += mid * idx[k..j].iter().filter(|&&i| labels[i] == 1).count() as f64;
        k = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One day's return of a selected set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayReturn {
    /// Sum of constituent returns, the literal per-day metric.
    pub raw: f64,
    /// Mean of constituent returns, the portfolio return.
    pub equal_weight: f64,
}

/// Close-to-close returns of `selected` from `prev` to `cur` prices.
pub fn irr(selected: &[usize], prev: &[f64], cur: &[f64]) -> Result<DayReturn> {
    if selected.is_empty() {
        return Err(Error::contract("irr: empty selection"));
    }
    let mut raw = 0.0;
    for &i in selected {
        let (p0, p1) = match (prev.get(i), cur.get(i)) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Data(format!("irr: no price for stock {i}"))),
        };
        if !(p0 > 0.0) || !(p1 > 0.0) {
            return Err(Error::Data(format!("irr: non-positive price for stock {i}")));
        }
        raw += (p1 - p0) / p0;
    }
    Ok(DayReturn {
        raw,
        equal_weight: raw / selected.len() as f64,
    })
}

/// Annualized Sharpe ratio of daily returns over the daily risk-free rate
/// `annual / 252`, with the sample standard deviation.
pub fn sharpe(returns: &[f64], risk_free_annual: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::Metric(format!("sharpe needs 2 days, got {}", returns.len())));
    }
    let rf = risk_free_annual / TRADING_DAYS_PER_YEAR;
    let n = returns.len() as f64;
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    let mean = excess.iter().sum::<f64>() / n;
    let var = excess.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if returns.iter().all(|&r| r == returns[0]) || !(sd > 0.0) {
        return Err(Error::Metric("sharpe: zero return variance".into()));
    }
    Ok(mean / sd * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Ranking scores for one target day, made from data before that day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDay {
    /// Calendar index of the target day.
    pub day: usize,
    /// Up-probability per stock.
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestDay {
    pub day: usize,
    pub selected: Vec<usize>,
    pub raw_return: f64,
    /// Equal-weight return net of the transaction cost.
    pub portfolio_return: f64,
    pub value_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub budget: f64,
    pub days: Vec<BacktestDay>,
    /// Portfolio value entering each test day; starts at the budget.
    pub value_curve: Vec<f64>,
    pub final_value: f64,
    /// Compounded return `final_value / budget − 1`.
    pub irr: f64,
    /// Sum over days of the summed constituent returns.
    pub raw_irr: f64,
    pub sharpe: Option<f64>,
    pub da: f64,
    pub pr_auc: Option<f64>,
    pub roc_auc: Option<f64>,
}

/// The `k` highest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut sel: Vec<usize> = ranked(scores).into_iter().take(k).collect();
    sel.sort_unstable();
    sel
}

/// Buys the top-k stocks at the close before each target day, sells at
/// its close, and reinvests everything. `closes[stock][day]` are calendar
/// closes.
pub fn backtest(days: &[ScoredDay], closes: &[Vec<f64>], config: &BacktestConfig) -> Result<BacktestReport> {
    if days.is_empty() {
        return Err(Error::contract("backtest: no test days"));
    }
    config.validate(closes.len())?;
    let mut value = config.budget;
    let mut curve = Vec::with_capacity(days.len());
    let mut out_days = Vec::with_capacity(days.len());
    let (mut raw_total, mut all_scores, mut all_labels) = (0.0, Vec::new(), Vec::new());
    for d in days {
        if d.scores.len() != closes.len() || d.day == 0 {
            return Err(Error::contract(format!("backtest: malformed day {}", d.day)));
        }
        let prev: Vec<f64> = closes.iter().map(|c| c.get(d.day - 1).copied().unwrap_or(f64::NAN)).collect();
        let cur: Vec<f64> = closes.iter().map(|c| c.get(d.day).copied().unwrap_or(f64::NAN)).collect();
        let selected = top_k(&d.scores, config.top_k);
        let r = irr(&selected, &prev, &cur)?;
        curve.push(value);
        value *= (1.0 + r.equal_weight) * (1.0 - config.cost_rate);
        let net = (1.0 + r.equal_weight) * (1.0 - config.cost_rate) - 1.0;
        raw_total += r.raw;
        out_days.push(BacktestDay {
            day: d.day,
            selected,
            raw_return: r.raw,
            portfolio_return: net,
            value_after: value,
        });
        all_scores.extend_from_slice(&d.scores);
        all_labels.extend_from_slice(&d.labels);
    }
    let returns: Vec<f64> = out_days.iter().map(|d| d.portfolio_return).collect();
    Ok(BacktestReport {
        budget: config.budget,
        days: out_days,
        value_curve: curve,
        final_value: value,
        irr: value / config.budget - 1.0,
        raw_irr: raw_total,
        sharpe: sharpe(&returns, config.risk_free_annual).ok(),
        da: directional_accuracy(&all_scores, &all_labels)?,
        pr_auc: auc_pr(&all_scores, &all_labels).ok(),
        roc_auc: auc_roc(&all_scores, &all_labels).ok(),
    })
}

/// DA, PR-AUC and ROC-AUC pooled over all stock-days of a split. The AUCs
/// are `None` when only one class occurs.
pub fn split_metrics(split: &str, days: &[ScoredDay]) -> Result<EvalMetrics> {
    let scores: Vec<f64> = days.iter().flat_map(|d| d.scores.iter().copied()).collect();
    let labels: Vec<u8> = days.iter().flat_map(|d| d.labels.iter().copied()).collect();
    if scores.is_empty() {
        return Err(Error::Metric(format!("no {split} predictions")));
    }
    Ok(EvalMetrics {
        split: split.to_string(),
        days: days.len(),
        samples: scores.len(),
        da: directional_accuracy(&scores, &labels)?,
        pr_auc: auc_pr(&scores, &labels).ok(),
        roc_auc: auc_roc(&scores, &labels).ok(),
    })
}
