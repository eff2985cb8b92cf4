//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.
//!
//! Reference values come from oracles written here, independently of the
//! library code they check.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spillover::attention::{neighbor_attention, relation_fuse, EdgeList, RelationEmbedding};
use spillover::data::{generate_synthetic, save_backtest, Dataset, SyntheticSpec};
use spillover::evaluation::{auc_roc, backtest, directional_accuracy, irr, sharpe, split_metrics, BacktestConfig, ScoredDay};
use spillover::graph::{infer_implicit_edges, EntityId, ImplicitRelationParams, MarketGraph, RelationKind, TypedEdge};
use spillover::model::{gradcheck, history_table, train, TrainConfig};
use spillover::numerics::{Tape, Tensor};
use spillover::signals::{Split, Splits};

const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const SIMPLEX_TRIALS: usize = 1000;
const SIMPLEX_TOL: f64 = 1e-9;
const SIMPLEX_BUDGET: Duration = Duration::from_secs(30);
const META_GRAPHS: usize = 200;
const META_BUDGET: Duration = Duration::from_secs(30);
const IMPLICIT_TRIALS: usize = 200;
const IMPLICIT_BUDGET: Duration = Duration::from_secs(10);
const METRIC_CASES: usize = 100;
const METRIC_TOL: f64 = 1e-9;
const METRIC_BUDGET: Duration = Duration::from_secs(10);
const LEARN_SEEDS: u64 = 5;
const LEARN_FULL_MIN_DA: f64 = 0.65;
const LEARN_SEQ_DA: (f64, f64) = (0.48, 0.56);
const LEARN_MIN_GAP: f64 = 0.02;
const LEARN_BUDGET: Duration = Duration::from_secs(30 * 60);
const BACKTEST_SEEDS: u64 = 10;
const BACKTEST_MIN_WINS: usize = 9;
const BACKTEST_BUDGET: Duration = Duration::from_secs(5 * 60);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, budget: Duration) -> (bool, String) {
    (elapsed < budget, format!("{:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs()))
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let report = match gradcheck(0, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let (fast, time) = within(start.elapsed(), GRADCHECK_BUDGET);
    let failed: Vec<&str> = report.groups.iter().filter(|g| !g.passed).map(|g| g.group.as_str()).collect();
    outcome(
        report.passed() && report.tolerance <= 1e-4 && fast,
        format!(
            "{} groups, max rel err {:.2e}, failed {:?}, {time}",
            report.groups.len(),
            report.max_rel_err(),
            failed
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_edges(rng: &mut ChaCha8Rng, targets: usize, sources: usize, same_class: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for t in 0..targets {
        for s in 0..sources {
            if (!same_class || s != t) && rng.random_bool(0.4) {
                pairs.push((t, s));
            }
        }
    }
    pairs
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn constant(tape: &mut Tape<f64>, t: &Tensor<f64>) -> spillover::numerics::Var {
    tape.constant(t.clone())
}

/// Node-level attention: with one-hot source features the aggregate row
/// of a target is `tanh` of its attention weights, so `atanh` recovers
/// them. Checks the simplex, and that relabeling sources leaves every
/// embedding unchanged.
fn node_level_trial(rng: &mut ChaCha8Rng, same_class: bool) -> Result<(), String> {
    let targets = rng.random_range(1..=8);
    let sources = if same_class { targets } else { rng.random_range(1..=8) };
    let pairs = random_edges(rng, targets, sources, same_class);
    let edges = EdgeList::from_pairs(pairs.clone());
    let width = sources;
    let scale = rng.random_range(0.1..20.0);
    let a = Tensor::vector((0..2 * width).map(|_| rng.random_range(-scale..scale)).collect());
    let xt = random_matrix(rng, targets, width, 1.0);
    let xs = Tensor::<f64>::identity(sources);

    let mut tape = Tape::new();
    let (av, tv, sv) = (constant(&mut tape, &a), constant(&mut tape, &xt), constant(&mut tape, &xs));
    let out = neighbor_attention(&mut tape, av, tv, sv, &edges, targets, None).map_err(|e| e.to_string())?;
    let h = tape.value(out.embedding);
    for t in 0..targets {
        let weights: Vec<f64> = h.row(t).iter().map(|x| x.atanh()).collect();
        let has = pairs.iter().any(|p| p.0 == t);
        let sum: f64 = weights.iter().sum();
        if has && (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(format!("node weights of target {t} sum to {sum}"));
        }
        if !has && sum != 0.0 {
            return Err(format!("isolated target {t} has weight {sum}"));
        }
        if weights.iter().any(|&w| w < -SIMPLEX_TOL) {
            return Err("negative attention weight".into());
        }
    }

    // Relabel sources with a random permutation; features move with them.
    let xs = random_matrix(rng, sources, width, 1.0);
    let mut perm: Vec<usize> = (0..sources).collect();
    perm.shuffle(rng);
    let mut xs_perm = vec![0.0; sources * width];
    for s in 0..sources {
        xs_perm[perm[s] * width..(perm[s] + 1) * width].copy_from_slice(xs.row(s));
    }
    let xs_perm = Tensor::matrix(sources, width, xs_perm).unwrap();
    let mut shuffled: Vec<(usize, usize)> = pairs.iter().map(|&(t, s)| (t, perm[s])).collect();
    shuffled.shuffle(rng);
    let edges_perm = EdgeList::from_pairs(shuffled);
    let run = |xs: &Tensor<f64>, edges: &EdgeList| -> Result<Vec<f64>, String> {
        let mut tape = Tape::new();
        let (av, tv, sv) = (constant(&mut tape, &a), constant(&mut tape, &xt), constant(&mut tape, xs));
        let out = neighbor_attention(&mut tape, av, tv, sv, edges, targets, None).map_err(|e| e.to_string())?;
        Ok(tape.value(out.embedding).data().to_vec())
    };
    let (h0, h1) = (run(&xs, &edges)?, run(&xs_perm, &edges_perm)?);
    if h0.iter().zip(&h1).any(|(x, y)| (x - y).abs() > SIMPLEX_TOL) {
        return Err("node-level output changed under source relabeling".into());
    }
    Ok(())
}

/// Relation-level attention: one-hot relation embeddings expose the
/// per-entity relation weights. Checks the simplex over covering
/// relations, and that reordering relations leaves the fused output
/// unchanged.
fn relation_level_trial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=8);
    let k = rng.random_range(1..=6);
    let covered: Vec<Vec<bool>> = (0..k).map(|_| (0..n).map(|_| rng.random_bool(0.6)).collect()).collect();
    let scale = rng.random_range(0.1..30.0);
    let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..scale)).collect();

    let fuse = |embeddings: &[Tensor<f64>], order: &[usize], fallback: &Tensor<f64>| -> Result<Tensor<f64>, String> {
        let mut tape = Tape::new();
        let rel: Vec<RelationEmbedding> = order
            .iter()
            .map(|&j| RelationEmbedding { embedding: tape.constant(embeddings[j].clone()), covered: covered[j].clone() })
            .collect();
        let sv: Vec<_> = order.iter().map(|&j| tape.constant(Tensor::vector(vec![scores[j]]))).collect();
        let fb = tape.constant(fallback.clone());
        let out = relation_fuse(&mut tape, &rel, &sv, fb).map_err(|e| e.to_string())?;
        Ok(tape.value(out).clone())
    };

    let one_hot: Vec<Tensor<f64>> = (0..k)
        .map(|j| {
            let data = (0..n).flat_map(|_| (0..k).map(move |c| f64::from(u8::from(c == j)))).collect();
            Tensor::matrix(n, k, data).unwrap()
        })
        .collect();
    let identity: Vec<usize> = (0..k).collect();
    let w = fuse(&one_hot, &identity, &Tensor::zeros(&[n, k]))?;
    for i in 0..n {
        let any = covered.iter().any(|c| c[i]);
        let sum: f64 = w.row(i).iter().sum();
        if any && (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(format!("relation weights of entity {i} sum to {sum}"));
        }
        for j in 0..k {
            if !covered[j][i] && w.at(i, j) != 0.0 {
                return Err(format!("relation {j} does not cover entity {i} but has weight"));
            }
        }
    }

    let width = rng.random_range(1..=4);
    let embeddings: Vec<Tensor<f64>> = (0..k).map(|_| random_matrix(rng, n, width, 1.0)).collect();
    let fallback = random_matrix(rng, n, width, 1.0);
    let mut order = identity.clone();
    order.shuffle(rng);
    let (z0, z1) = (fuse(&embeddings, &identity, &fallback)?, fuse(&embeddings, &order, &fallback)?);
    if z0.data().iter().zip(z1.data()).any(|(x, y)| (x - y).abs() > SIMPLEX_TOL) {
        return Err("relation-level output changed under relation reordering".into());
    }
    Ok(())
}

fn attention_simplex() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for trial in 0..SIMPLEX_TRIALS {
        // inter-class node level, intra-class node level, relation level
        for r in [node_level_trial(&mut rng, false), node_level_trial(&mut rng, true), relation_level_trial(&mut rng)] {
            if let Err(e) = r {
                failures.push(format!("trial {trial}: {e}"));
            }
        }
    }
    let (fast, time) = within(start.elapsed(), SIMPLEX_BUDGET);
    outcome(
        failures.is_empty() && fast,
        format!("{SIMPLEX_TRIALS} trials, {} failures {:?}, {time}", failures.len(), failures.first()),
    )
}

// ---------------------------------------------------------------- 3

fn random_graph(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<TypedEdge>) {
    let nc = rng.random_range(2..=15);
    let ne = rng.random_range(0..=10);
    let mut edges = Vec::new();
    for e in 0..ne {
        let first = rng.random_range(0..nc);
        edges.push(TypedEdge::new(RelationKind::Management, EntityId::company(first), EntityId::executive(e)));
        for c in 0..nc {
            if c != first && rng.random_bool(0.15) {
                let kind = if rng.random_bool(0.5) { RelationKind::Management } else { RelationKind::ExecInvestment };
                edges.push(TypedEdge::new(kind, EntityId::company(c), EntityId::executive(e)));
            }
        }
    }
    // An executive may manage and invest in the same company.
    let mut seen = BTreeSet::new();
    edges.retain(|e| seen.insert((e.kind, e.a, e.b)));
    for e1 in 0..ne {
        for e2 in e1 + 1..ne {
            for kind in [RelationKind::Classmate, RelationKind::Colleague] {
                if rng.random_bool(0.2) {
                    edges.push(TypedEdge::new(kind, EntityId::executive(e1), EntityId::executive(e2)));
                }
            }
        }
    }
    (nc, ne, edges)
}

/// Exhaustive enumeration of company-executive-company and
/// company-executive-executive-company paths over the raw edge list.
fn meta_oracle(nc: usize, ne: usize, edges: &[TypedEdge]) -> (BTreeSet<(usize, usize)>, BTreeSet<(usize, usize)>) {
    let mut link = vec![vec![false; ne]; nc];
    let mut social = vec![vec![false; ne]; ne];
    for e in edges {
        match e.kind {
            RelationKind::Management | RelationKind::ExecInvestment => link[e.a.index][e.b.index] = true,
            RelationKind::Classmate | RelationKind::Colleague => {
                social[e.a.index][e.b.index] = true;
                social[e.b.index][e.a.index] = true;
            }
            _ => {}
        }
    }
    let (mut cec, mut ceec) = (BTreeSet::new(), BTreeSet::new());
    for a in 0..nc {
        for b in 0..nc {
            if a >= b {
                continue;
            }
            for x in 0..ne {
                if link[a][x] && link[b][x] {
                    cec.insert((a, b));
                }
                for y in 0..ne {
                    if x != y && social[x][y] && ((link[a][x] && link[b][y]) || (link[b][x] && link[a][y])) {
                        ceec.insert((a, b));
                    }
                }
            }
        }
    }
    (cec, ceec)
}

fn meta_relations() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = Vec::new();
    let mut total = (0, 0);
    for trial in 0..META_GRAPHS {
        let (nc, ne, edges) = random_graph(&mut rng);
        let graph = match MarketGraph::build(nc, ne, &edges) {
            Ok(g) => g.derive_meta_relations(),
            Err(e) => return outcome(false, format!("graph {trial} rejected: {e}")),
        };
        let (cec, ceec) = meta_oracle(nc, ne, &edges);
        total.0 += cec.len();
        total.1 += ceec.len();
        let got_cec: BTreeSet<_> = graph.pairs(RelationKind::Cec).into_iter().collect();
        let got_ceec: BTreeSet<_> = graph.pairs(RelationKind::Ceec).into_iter().collect();
        if got_cec != cec || got_ceec != ceec {
            mismatches.push(trial);
        }
    }
    let (fast, time) = within(start.elapsed(), META_BUDGET);
    outcome(
        mismatches.is_empty() && fast,
        format!(
            "{META_GRAPHS} graphs, {} CEC and {} CEEC pairs, mismatched graphs {:?}, {time}",
            total.0, total.1, mismatches
        ),
    )
}

// ---------------------------------------------------------------- 4

fn implicit_edges() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    for trial in 0..IMPLICIT_TRIALS {
        let n = rng.random_range(2..=12);
        let f = rng.random_range(1..=6);
        let s = random_matrix(&mut rng, n, f, 2.0);
        let u = Tensor::vector((0..2 * f).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut etas: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        etas.extend([f64::NEG_INFINITY, 0.0, f64::INFINITY]);
        etas.sort_by(f64::total_cmp);
        let sets: Vec<BTreeSet<(usize, usize)>> = etas
            .iter()
            .map(|&eta| {
                let p = ImplicitRelationParams { u: u.clone(), eta };
                infer_implicit_edges(&s, &p).unwrap().into_iter().map(|e| (e.src, e.dst)).collect()
            })
            .collect();
        if sets.windows(2).any(|w| !w[1].is_subset(&w[0])) {
            failures.push(format!("trial {trial}: raising eta added an edge"));
        }
        if sets[0].len() != n * (n - 1) || !sets[sets.len() - 1].is_empty() {
            failures.push(format!("trial {trial}: infinite thresholds"));
        }

        let eta = rng.random_range(-0.5..0.5);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut data = vec![0.0; n * f];
        for i in 0..n {
            data[perm[i] * f..(perm[i] + 1) * f].copy_from_slice(s.row(i));
        }
        let s_perm = Tensor::matrix(n, f, data).unwrap();
        let p = ImplicitRelationParams { u: u.clone(), eta };
        let base = infer_implicit_edges(&s, &p).unwrap();
        let moved: BTreeSet<(usize, usize, u64)> =
            base.iter().map(|e| (perm[e.src], perm[e.dst], e.alpha.to_bits())).collect();
        let permuted: BTreeSet<(usize, usize, u64)> =
            infer_implicit_edges(&s_perm, &p).unwrap().iter().map(|e| (e.src, e.dst, e.alpha.to_bits())).collect();
        if moved != permuted {
            failures.push(format!("trial {trial}: not permutation-equivariant"));
        }
    }
    let (fast, time) = within(start.elapsed(), IMPLICIT_BUDGET);
    outcome(
        failures.is_empty() && fast,
        format!("{IMPLICIT_TRIALS} trials, {} failures {:?}, {time}", failures.len(), failures.first()),
    )
}

// ---------------------------------------------------------------- 5

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..200);
    // coarse grid so ties occur
    let levels = rng.random_range(2..20);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

fn pairwise_roc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 4];
    let mut errors = Vec::new();
    for _ in 0..METRIC_CASES {
        let (scores, labels) = random_case(&mut rng);
        let hits = scores.iter().zip(&labels).filter(|(s, l)| (**s > 0.5) == (**l == 1)).count();
        match directional_accuracy(&scores, &labels) {
            Ok(da) => worst[0] = worst[0].max((da - hits as f64 / labels.len() as f64).abs()),
            Err(e) => errors.push(format!("DA: {e}")),
        }
        match auc_roc(&scores, &labels) {
            Ok(roc) => worst[1] = worst[1].max((roc - pairwise_roc(&scores, &labels)).abs()),
            Err(e) => errors.push(format!("ROC: {e}")),
        }

        let stocks = rng.random_range(1..30);
        let prev: Vec<f64> = (0..stocks).map(|_| rng.random_range(1.0..100.0)).collect();
        let cur: Vec<f64> = prev.iter().map(|p| p * rng.random_range(0.8..1.2)).collect();
        let mut pick: Vec<usize> = (0..stocks).collect();
        pick.shuffle(&mut rng);
        pick.truncate(rng.random_range(1..=stocks));
        let expect_raw: f64 = pick.iter().map(|&i| cur[i] / prev[i] - 1.0).sum();
        match irr(&pick, &prev, &cur) {
            Ok(r) => {
                let e = (r.raw - expect_raw).abs().max((r.equal_weight - expect_raw / pick.len() as f64).abs());
                worst[2] = worst[2].max(e);
            }
            Err(e) => errors.push(format!("IRR: {e}")),
        }

        let days = rng.random_range(2..300);
        let returns: Vec<f64> = (0..days).map(|_| rng.random_range(-0.05..0.05)).collect();
        let rf = rng.random_range(0.0..0.05);
        let excess: Vec<f64> = returns.iter().map(|r| r - rf / 252.0).collect();
        let m = excess.iter().sum::<f64>() / days as f64;
        let sd = (excess.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (days - 1) as f64).sqrt();
        let expect = m / sd * 252f64.sqrt();
        match sharpe(&returns, rf) {
            Ok(s) => worst[3] = worst[3].max((s - expect).abs() / expect.abs().max(1.0)),
            Err(e) => errors.push(format!("Sharpe: {e}")),
        }
    }
    let (fast, time) = within(start.elapsed(), METRIC_BUDGET);
    outcome(
        errors.is_empty() && worst.iter().all(|&w| w <= METRIC_TOL) && fast,
        format!(
            "{METRIC_CASES} cases each, max err DA {:.1e} ROC {:.1e} IRR {:.1e} Sharpe {:.1e}, errors {:?}, {time}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            errors.first()
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Reduced model size; the default hyperparameters train far too slowly
/// for the time budget on one core.
fn learn_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lookback: 10,
        slices: 4,
        hidden: 16,
        attention_hidden: 8,
        learning_rate: 0.005,
        max_epochs: 25,
        patience: 8,
        seed,
        ..TrainConfig::default()
    }
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let dataset = match generate_synthetic(&SyntheticSpec::default()).and_then(|b| Dataset::from_bundle(&b)) {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("dataset: {e}")),
    };
    let variants: [(&str, &[&str]); 6] = [
        ("full", &[]),
        ("sequence-only", &["explicit", "implicit", "executives"]),
        ("-executives", &["executives"]),
        ("-implicit", &["implicit"]),
        ("-explicit", &["explicit"]),
        ("-dual", &["dual"]),
    ];
    let mut means = Vec::new();
    for (name, ablate) in variants {
        let mut das = Vec::new();
        for seed in 0..LEARN_SEEDS {
            let mut config = learn_config(seed);
            for a in ablate {
                config.ablate(a).expect("known ablation");
            }
            let run = train::<f64>(&dataset, &config, 1)
                .and_then(|(m, _)| m.predict_split(&dataset, Split::Test, 1))
                .and_then(|days| split_metrics("test", &days));
            match run {
                Ok(m) => das.push(m.da),
                Err(e) => return outcome(false, format!("{name} seed {seed}: {e}")),
            }
        }
        let mean = das.iter().sum::<f64>() / das.len() as f64;
        eprintln!("    {name:<14} test DA {mean:.4}  {das:.4?}");
        means.push((name, mean));
    }
    let full = means[0].1;
    let seq = means[1].1;
    let (best_name, best_single) =
        means[2..].iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).expect("four single ablations");
    let (fast, time) = within(start.elapsed(), LEARN_BUDGET);
    let checks = [
        full > LEARN_FULL_MIN_DA,
        (LEARN_SEQ_DA.0..=LEARN_SEQ_DA.1).contains(&seq),
        full - best_single >= LEARN_MIN_GAP,
        fast,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "full {full:.4} (> {LEARN_FULL_MIN_DA}), sequence-only {seq:.4} (in {LEARN_SEQ_DA:?}), \
             gap over {best_name} {:.4} (>= {LEARN_MIN_GAP}), {time}",
            full - best_single
        ),
    )
}

// ---------------------------------------------------------------- 7

fn backtest_sanity() -> Outcome {
    let start = Instant::now();
    let flat_closes = vec![vec![25.0; 30]; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let days: Vec<ScoredDay> = (1..30)
        .map(|day| ScoredDay { day, scores: (0..6).map(|_| rng.random()).collect(), labels: vec![0, 1, 0, 1, 0, 1] })
        .collect();
    let config = BacktestConfig { top_k: 3, cost_rate: 0.0, ..BacktestConfig::default() };
    let flat = match backtest(&days, &flat_closes, &config) {
        Ok(r) => r.value_curve.iter().all(|&v| v == config.budget) && r.final_value == config.budget,
        Err(e) => return outcome(false, format!("flat market: {e}")),
    };

    let mut wins = 0;
    for seed in 0..BACKTEST_SEEDS {
        let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
        let ds = match generate_synthetic(&spec).and_then(|b| Dataset::from_bundle(&b)) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let closes = ds.closes();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let range = ds.calendar.split_days(Split::Test);
        let (mut oracle, mut random) = (Vec::new(), Vec::new());
        for day in range.start.max(1)..range.end {
            let labels = ds.labels(day);
            let next: Vec<f64> = closes.iter().map(|c| c[day] / c[day - 1] - 1.0).collect();
            oracle.push(ScoredDay { day, scores: next, labels: labels.clone() });
            random.push(ScoredDay { day, scores: (0..closes.len()).map(|_| rng.random()).collect(), labels });
        }
        let config = BacktestConfig::default();
        match (backtest(&oracle, &closes, &config), backtest(&random, &closes, &config)) {
            (Ok(o), Ok(r)) => wins += usize::from(o.final_value > r.final_value),
            (Err(e), _) | (_, Err(e)) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let (fast, time) = within(start.elapsed(), BACKTEST_BUDGET);
    outcome(
        flat && wins >= BACKTEST_MIN_WINS && fast,
        format!("flat curve exact: {flat}, oracle beats random in {wins}/{BACKTEST_SEEDS} seeds, {time}"),
    )
}

// ---------------------------------------------------------------- 8

fn small_spec() -> SyntheticSpec {
    let d = |m: u32, day: u32| NaiveDate::from_ymd_opt(2019, m, day).unwrap();
    let mut spec = SyntheticSpec {
        companies: 12,
        executives: 10,
        leaders: 2,
        seed: 8,
        start: d(1, 1),
        end: d(6, 28),
        splits: Splits { train: (d(1, 1), d(4, 30)), valid: (d(5, 1), d(5, 31)), test: (d(6, 1), d(6, 28)) },
        ..SyntheticSpec::default()
    };
    spec.edges.industry_category = 10;
    spec.edges.supply_chain = 4;
    spec.edges.business_partnership = 4;
    spec.edges.investment = 2;
    spec.edges.management = 14;
    spec.edges.exec_investment = 2;
    spec.edges.classmate = 3;
    spec.edges.colleague = 2;
    spec
}

fn report_bytes(dir: &std::path::Path) -> Vec<Vec<u8>> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn determinism() -> Outcome {
    let run = |threads: usize| -> Result<(String, String, Vec<Vec<u8>>), String> {
        let ds = Dataset::from_bundle(&generate_synthetic(&small_spec()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let config = TrainConfig { lookback: 5, slices: 3, hidden: 6, attention_hidden: 4, max_epochs: 4, seed: 11, ..TrainConfig::default() };
        let (model, history) = train::<f64>(&ds, &config, threads).map_err(|e| e.to_string())?;
        let days = model.predict_split(&ds, Split::Test, threads).map_err(|e| e.to_string())?;
        let report = backtest(&days, &ds.closes(), &BacktestConfig { top_k: 4, ..BacktestConfig::default() })
            .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        save_backtest(&report, dir.path()).map_err(|e| e.to_string())?;
        let history = format!("{:?}", history_table(&history));
        Ok((model.params.checksum(), history, report_bytes(dir.path())))
    };
    match (run(1), run(1), run(3)) {
        (Ok(a), Ok(b), Ok(c)) => outcome(
            a == b && a == c,
            format!(
                "checksum {}, repeat run identical: {}, 3-thread scoring identical: {}",
                &a.0[..16.min(a.0.len())],
                a == b,
                a == c
            ),
        ),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => outcome(false, e),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("attention simplex", attention_simplex),
        ("meta-relation oracle", meta_relations),
        ("implicit-edge properties", implicit_edges),
        ("metric oracles", metric_oracles),
        ("planted-signal learnability", learnability),
        ("backtest sanity", backtest_sanity),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        failed += usize::from(!o.passed);
        eprintln!("criterion {} {name}: {} ({})", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
