//! End-to-end finite-difference check of the full model on a tiny market.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::data::{generate_synthetic, Dataset, EdgeCounts, SyntheticSpec};
use crate::error::Result;
use crate::numerics::{OpKind, Params, Tape, Tensor};
use crate::signals::{first_eligible_day, Splits};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Five-point stencil step; truncation error is O(h⁴).
const STEP: f64 = 5e-4;
/// Below this magnitude both gradients count as zero and are compared
/// absolutely.
const TINY: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    /// Parameter-name prefix before the first `.`.
    pub group: String,
    pub elements: usize,
    pub max_rel_err: f64,
    /// Parameter holding the worst element.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub loss: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

/// Three companies, two executives, a few weeks of prices.
pub fn gradcheck_dataset(seed: u64) -> Result<Dataset> {
    let d = |m: u32, day: u32| NaiveDate::from_ymd_opt(2019, m, day).expect("valid date");
    let spec = SyntheticSpec {
        companies: 3,
        executives: 2,
        edges: EdgeCounts {
            industry_category: 1,
            supply_chain: 1,
            business_partnership: 1,
            investment: 1,
            management: 3,
            exec_investment: 1,
            classmate: 1,
            colleague: 0,
        },
        leaders: 1,
        seed,
        start: d(11, 1),
        end: d(12, 31),
        splits: Splits { train: (d(11, 1), d(11, 30)), valid: (d(12, 1), d(12, 15)), test: (d(12, 16), d(12, 31)) },
        ..SyntheticSpec::default()
    };
    Dataset::from_bundle(&generate_synthetic(&spec)?)
}

/// The configuration used by [`gradcheck`]: T = M = F = F′ = 2 and every
/// pair kept as an implicit edge.
pub fn gradcheck_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lookback: 2,
        slices: 2,
        hidden: 2,
        attention_hidden: 2,
        eta: f64::NEG_INFINITY,
        seed,
        ..TrainConfig::default()
    }
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Compares backpropagated gradients of one day's loss with central
/// differences, for every parameter element. `fault` scales the backward
/// rule of one operation kind, which must make the check fail.
pub fn gradcheck(seed: u64, fault: Option<OpKind>) -> Result<GradcheckReport> {
    let dataset = gradcheck_dataset(seed)?;
    let model = Model::<f64>::new(gradcheck_config(seed))?;
    let index = model.index(&dataset);
    let day = first_eligible_day(model.config.lookback);

    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_backward_fault(kind);
    }
    let root = model.day_loss(&mut tape, &dataset, &index, day)?;
    let loss = tape.value(root).item()?;
    let mut grads = tape.backward(root)?;
    grads.complete_for(&model.params);

    let eval = |params: &Params<f64>| -> Result<f64> {
        let m = Model { config: model.config.clone(), params: params.clone() };
        let mut t = Tape::new();
        let r = m.day_loss(&mut t, &dataset, &index, day)?;
        t.value(r).item()
    };

    let mut groups: BTreeMap<String, GroupCheck> = BTreeMap::new();
    let mut probe = model.params.clone();
    for (name, p) in model.params.iter() {
        let zeros = Tensor::zeros(p.shape());
        let analytic = grads.get(name).unwrap_or(&zeros);
        let g = groups.entry(group_of(name).to_string()).or_insert_with(|| GroupCheck {
            group: group_of(name).to_string(),
            elements: 0,
            max_rel_err: 0.0,
            worst: name.clone(),
            passed: true,
        });
        for i in 0..p.len() {
            let x = p.data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(name).expect("present").data_mut()[i] = x + offset;
                eval(&probe)
            };
            let (p2, p1, m1, m2) = (at(2.0 * STEP)?, at(STEP)?, at(-STEP)?, at(-2.0 * STEP)?);
            probe.get_mut(name).expect("present").data_mut()[i] = x;
            let numeric = (m2 - p2 + 8.0 * (p1 - m1)) / (12.0 * STEP);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < TINY { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            g.elements += 1;
            if err > g.max_rel_err || err.is_nan() {
                g.max_rel_err = err;
                g.worst = name.clone();
            }
        }
    }
    let groups = groups
        .into_values()
        .map(|mut g| {
            g.passed = g.max_rel_err <= GRADCHECK_TOLERANCE;
            g
        })
        .collect();
    Ok(GradcheckReport { tolerance: GRADCHECK_TOLERANCE, loss, groups })
}
