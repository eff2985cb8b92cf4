//! End-to-end model: windows → fusion → recurrent encoder → implicit
//! edges → dual attention → prediction head.

mod checkpoint;
mod config;
mod gradcheck;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointParam, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{load_config, StopMetric, TrainConfig, ABLATIONS, CONFIG_KEYS};
pub use gradcheck::{gradcheck, gradcheck_config, gradcheck_dataset, GradcheckReport, GroupCheck, GRADCHECK_TOLERANCE};
pub use train::{history_table, train, EpochRecord, TrainHistory};

use crate::attention::{dual_forward, AttentionSpec, EdgeList, GraphIndex, ImplicitMessages};
use crate::data::Dataset;
use crate::encoder::{encode_windows, FusionParams, FusionVars, GruParams, GruVars};
use crate::error::{Error, Result};
use crate::evaluation::ScoredDay;
use crate::graph::{infer_implicit_edges, ImplicitEdge, ImplicitRelationParams, RelationKind};
use crate::numerics::{Params, Scalar, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::signals::{build_window, Split};

pub const IMPLICIT_U: &str = "implicit.u";
pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";
/// Probabilities are clamped here before the log in the loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// One stock's prediction for one day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stock: usize,
    pub day: usize,
    /// `[down, up]`.
    pub probs: [f64; 2],
}

impl Prediction {
    /// Ranking score: the up probability.
    pub fn score(&self) -> f64 {
        self.probs[1]
    }
}

/// A configuration and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: TrainConfig,
    pub params: Params<T>,
}

/// Tape handles produced by one day's forward pass.
#[derive(Clone, Debug)]
pub struct DayForward<T> {
    /// `[N × 2]` class probabilities.
    pub probs: Var,
    /// `[N × F]` sequential embeddings.
    pub s: Var,
    /// Implicit edges selected on this day.
    pub implicit: Vec<ImplicitEdge<T>>,
}

impl TrainConfig {
    /// Attention layout implied by the ablation flags.
    pub fn attention_spec(&self) -> AttentionSpec {
        let mut company_intra = Vec::new();
        if self.use_explicit {
            company_intra.extend(RelationKind::EXPLICIT);
        }
        if self.use_executives {
            company_intra.extend([RelationKind::Cec, RelationKind::Ceec]);
        }
        if self.use_implicit {
            company_intra.push(RelationKind::Implicit);
        }
        AttentionSpec {
            input_width: self.hidden,
            hidden: self.attention_hidden,
            use_executives: self.use_executives,
            dual: self.use_dual,
            layers: self.dual_layers,
            company_intra,
        }
    }

    /// Every parameter name and shape the configuration calls for.
    pub fn registry(&self) -> Vec<(String, Vec<usize>)> {
        let (m, f) = (self.slices, self.hidden);
        let mut out = vec![
            (crate::encoder::FUSION_W_T.to_string(), vec![5, 3, m]),
            (crate::encoder::FUSION_V.to_string(), vec![m, 8]),
            (crate::encoder::FUSION_B.to_string(), vec![m]),
        ];
        for name in crate::encoder::GRU_NAMES {
            let shape = match name.as_bytes()[name.len() - 3] {
                b'w' => vec![f, m],
                b'u' => vec![f, f],
                _ => vec![f],
            };
            out.push((name.to_string(), shape));
        }
        if self.use_implicit {
            out.push((IMPLICIT_U.to_string(), vec![2 * f]));
        }
        out.extend(self.attention_spec().param_shapes());
        out.push((HEAD_W.to_string(), vec![2, f + self.attention_hidden]));
        out.push((HEAD_B.to_string(), vec![2]));
        out.sort();
        out
    }
}

/// `(src, dst)` → `(target, neighbor)` edge list for attention.
fn implicit_list<T>(edges: &[ImplicitEdge<T>]) -> EdgeList {
    EdgeList::from_pairs(edges.iter().map(|e| (e.src, e.dst)).collect())
}

impl<T: Scalar> Model<T> {
    /// Glorot initialization from `config.seed`; the head bias starts at 0.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::new();
        FusionParams::<T>::glorot(config.slices, &mut rng).insert_into(&mut params);
        GruParams::<T>::glorot(config.slices, config.hidden, &mut rng).insert_into(&mut params);
        if config.use_implicit {
            params.insert(IMPLICIT_U, Tensor::glorot(&[2 * config.hidden], &mut rng));
        }
        config.attention_spec().init_params(&mut rng, &mut params);
        params.insert(HEAD_W, Tensor::glorot(&[2, config.hidden + config.attention_hidden], &mut rng));
        params.insert(HEAD_B, Tensor::zeros(&[2]));
        Ok(Model { config, params })
    }

    /// Adopts parameters after checking them against the registry.
    pub fn from_params(config: TrainConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let want = config.registry();
        let have: Vec<(String, Vec<usize>)> = params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if want != have {
            let missing: Vec<_> = want.iter().filter(|w| !have.contains(w)).map(|w| &w.0).collect();
            let extra: Vec<_> = have.iter().filter(|h| !want.contains(h)).map(|h| &h.0).collect();
            return Err(Error::Data(format!(
                "parameters do not match the configuration: missing or misshapen {missing:?}, unexpected {extra:?}"
            )));
        }
        Ok(Model { config, params })
    }

    pub fn index(&self, dataset: &Dataset) -> GraphIndex {
        GraphIndex::new(&dataset.graph)
    }

    /// Records one day's forward pass for all stocks on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        dataset: &Dataset,
        index: &GraphIndex,
        day: usize,
    ) -> Result<DayForward<T>> {
        let cfg = &self.config;
        let windows = dataset
            .series
            .iter()
            .map(|s| build_window(s, day, cfg.lookback))
            .collect::<Result<Vec<_>>>()?;
        let fv = FusionVars::bind(tape, &self.params)?;
        let gv = GruVars::bind(tape, &self.params)?;
        let s = encode_windows(tape, &fv, &gv, &windows)?;

        let mut implicit = Vec::new();
        let mut messages = ImplicitMessages::default();
        if cfg.use_implicit {
            let u = self.param(IMPLICIT_U)?;
            let ip = ImplicitRelationParams { u: u.clone(), eta: cfg.eta };
            implicit = infer_implicit_edges(tape.value(s), &ip)?;
            messages.edges = implicit_list(&implicit);
            if cfg.implicit_gate && !implicit.is_empty() {
                // the same scores, recorded so the gate passes gradient to u
                let f = cfg.hidden;
                let uv = tape.param(IMPLICIT_U, u);
                let ua = tape.slice(uv, 0, f)?;
                let ub = tape.slice(uv, f, f)?;
                let a = tape.matmul(s, ua)?;
                let b = tape.matmul(s, ub)?;
                let src: Vec<usize> = implicit.iter().map(|e| e.src).collect();
                let dst: Vec<usize> = implicit.iter().map(|e| e.dst).collect();
                let ga = tape.gather_rows(a, &src)?;
                let gb = tape.gather_rows(b, &dst)?;
                let sum = tape.add(ga, gb)?;
                let alpha = tape.leaky_relu(sum, T::of(LEAKY_SLOPE));
                messages.gate = Some(tape.sigmoid(alpha));
            }
        }

        let out = dual_forward(tape, &self.params, &cfg.attention_spec(), index, s, &messages)?;
        let z = tape.concat_cols(s, out.companies)?;
        let w = tape.param(HEAD_W, self.param(HEAD_W)?);
        let b = tape.param(HEAD_B, self.param(HEAD_B)?);
        let logits = tape.matmul_nt(z, w)?;
        let logits = tape.add_row(logits, b)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(DayForward { probs, s, implicit })
    }

    fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    /// Predictions for every stock on `day`.
    pub fn forward_day(&self, dataset: &Dataset, index: &GraphIndex, day: usize) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let fwd = self.forward_tape(&mut tape, dataset, index, day)?;
        let p = tape.value(fwd.probs);
        Ok((0..p.rows_cols().0)
            .map(|i| Prediction { stock: i, day, probs: [p.at(i, 0).as_f64(), p.at(i, 1).as_f64()] })
            .collect())
    }

    /// The day's implicit edges with their scores.
    pub fn implicit_edges(&self, dataset: &Dataset, index: &GraphIndex, day: usize) -> Result<Vec<ImplicitEdge<T>>> {
        let mut tape = Tape::new();
        Ok(self.forward_tape(&mut tape, dataset, index, day)?.implicit)
    }

    /// Cross-entropy of one day on `tape`, summed over stocks.
    pub fn day_loss(&self, tape: &mut Tape<T>, dataset: &Dataset, index: &GraphIndex, day: usize) -> Result<Var> {
        let fwd = self.forward_tape(tape, dataset, index, day)?;
        let labels: Vec<usize> = dataset.labels(day).into_iter().map(usize::from).collect();
        nll(tape, fwd.probs, &labels)
    }

    /// Mean per-day loss over a split's eligible days.
    pub fn split_loss(&self, dataset: &Dataset, split: Split) -> Result<f64> {
        let index = self.index(dataset);
        let days = dataset.calendar.eligible_days(split, self.config.lookback);
        if days.is_empty() {
            return Err(Error::Data(format!("no {} days with a full window", split.name())));
        }
        let n = days.len();
        let mut total = 0.0;
        for day in days {
            let mut tape = Tape::new();
            let l = self.day_loss(&mut tape, dataset, &index, day)?;
            total += tape.value(l).item()?.as_f64();
        }
        Ok(total / n as f64)
    }

    /// Scores and labels for every eligible day of a split, computed on
    /// up to `threads` worker threads. Results do not depend on `threads`.
    pub fn predict_split(&self, dataset: &Dataset, split: Split, threads: usize) -> Result<Vec<ScoredDay>> {
        let index = self.index(dataset);
        let days: Vec<usize> = dataset.calendar.eligible_days(split, self.config.lookback).collect();
        let one = |day: usize| -> Result<ScoredDay> {
            let preds = self.forward_day(dataset, &index, day)?;
            Ok(ScoredDay { day, scores: preds.iter().map(Prediction::score).collect(), labels: dataset.labels(day) })
        };
        if threads <= 1 {
            return days.into_iter().map(one).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
        pool.install(|| days.into_par_iter().map(one).collect())
    }
}

/// `−Σ ln(max(p[i, y_i], 1e-12))`.
pub fn nll<T: Scalar>(tape: &mut Tape<T>, probs: Var, labels: &[usize]) -> Result<Var> {
    let picked = tape.pick(probs, labels)?;
    let logs = tape.ln_clamped(picked, T::of(LOG_FLOOR));
    let total = tape.sum_all(logs);
    Ok(tape.scale(total, -T::one()))
}

/// Loss of fixed predictions, for reporting.
pub fn loss(predictions: &[Prediction], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut tape = Tape::<f64>::new();
    let data: Vec<f64> = predictions.iter().flat_map(|p| p.probs).collect();
    let probs = tape.constant(Tensor::new(vec![predictions.len(), 2], data)?);
    let idx: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let l = nll(&mut tape, probs, &idx)?;
    tape.value(l).item()
}
