//! Relational embeddings over the company/executive graph.
//!
//! The dual pass first lets every entity attend to its neighbors of the
//! other class (one embedding per inter-class relation, fused by
//! population-level relation importance), then lets every entity attend
//! to neighbors of its own class per intra-class relation, fused the same
//! way. The flat variant replaces both with one attention over the union
//! of all neighbors.
//!
//! Entities without neighbors under a relation get a zero embedding and
//! that relation is left out of their relation-level softmax. An entity
//! with no relation at all keeps its input (the projected feature after
//! the inter pass, `z` after the intra pass).

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{MarketGraph, RelationKind};
use crate::numerics::{Params, Scalar, Tape, Tensor, Var, LEAKY_SLOPE};

/// Which relations and entity classes take part, and the layer sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    /// Width F of the sequential embeddings.
    pub input_width: usize,
    /// Width F′ of the attention layers.
    pub hidden: usize,
    pub use_executives: bool,
    pub dual: bool,
    /// Dual layers; ignored by the flat variant.
    pub layers: usize,
    /// Active company relations, Implicit included when enabled.
    pub company_intra: Vec<RelationKind>,
}

impl AttentionSpec {
    pub fn inter(&self) -> &'static [RelationKind] {
        if self.use_executives {
            &RelationKind::INTER
        } else {
            &[]
        }
    }

    pub fn executive_intra(&self) -> &'static [RelationKind] {
        if self.use_executives {
            &RelationKind::EXECUTIVE_INTRA
        } else {
            &[]
        }
    }

    pub fn uses(&self, kind: RelationKind) -> bool {
        self.company_intra.contains(&kind) || self.inter().contains(&kind) || self.executive_intra().contains(&kind)
    }

    /// Every parameter name and shape, in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let fp = self.hidden;
        let mut out = Vec::new();
        if !self.dual {
            out.push((PROJ_COMPANY.to_string(), vec![fp, self.input_width]));
            if self.use_executives {
                out.push((PROJ_EXECUTIVE.to_string(), vec![fp, self.input_width]));
            }
            out.push((FLAT_A.to_string(), vec![2 * fp]));
            return out;
        }
        for l in 0..self.layers.max(1) {
            let d = if l == 0 { self.input_width } else { fp };
            let mut push = |base: &str, shape: Vec<usize>| out.push((layer_name(base, l), shape));
            push(PROJ_COMPANY, vec![fp, d]);
            if self.use_executives {
                push(PROJ_EXECUTIVE, vec![fp, d]);
                for &k in self.inter() {
                    push(&attention_name("inter", k), vec![2 * fp]);
                }
                push(INTER_Q_COMPANY, vec![fp]);
                push(INTER_Q_EXECUTIVE, vec![fp]);
            }
            if !self.company_intra.is_empty() {
                push(INTRA_W_COMPANY, vec![fp, fp]);
                for &k in &self.company_intra {
                    push(&attention_name("intra", k), vec![2 * fp]);
                }
                push(INTRA_Q_COMPANY, vec![fp]);
            }
            if !self.executive_intra().is_empty() {
                push(INTRA_W_EXECUTIVE, vec![fp, fp]);
                for &k in self.executive_intra() {
                    push(&attention_name("intra", k), vec![2 * fp]);
                }
                push(INTRA_Q_EXECUTIVE, vec![fp]);
            }
        }
        out
    }

    /// Glorot-initialized parameters added to `params`.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, params: &mut Params<T>) {
        for (name, shape) in self.param_shapes() {
            params.insert(name, Tensor::glorot(&shape, rng));
        }
    }
}

pub const PROJ_COMPANY: &str = "proj.w_company";
pub const PROJ_EXECUTIVE: &str = "proj.w_executive";
pub const INTER_Q_COMPANY: &str = "inter.q_company";
pub const INTER_Q_EXECUTIVE: &str = "inter.q_executive";
pub const INTRA_W_COMPANY: &str = "intra.w_company";
pub const INTRA_W_EXECUTIVE: &str = "intra.w_executive";
pub const INTRA_Q_COMPANY: &str = "intra.q_company";
pub const INTRA_Q_EXECUTIVE: &str = "intra.q_executive";
pub const FLAT_A: &str = "flat.a";

/// `inter.a_management`, `intra.a_supply_chain`, ...
pub fn attention_name(stage: &str, kind: RelationKind) -> String {
    format!("{stage}.a_{}", kind.name())
}

/// Layer 0 keeps the base name; deeper layers get a `.layer<l>` suffix.
pub fn layer_name(base: &str, layer: usize) -> String {
    if layer == 0 {
        base.to_string()
    } else {
        format!("{base}.layer{layer}")
    }
}

/// Directed edges sorted by `(target, source)`; messages flow from
/// source to target.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeList {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
}

impl EdgeList {
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let (targets, sources) = pairs.into_iter().unzip();
        EdgeList { targets, sources }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Whether each of `n` targets receives at least one message.
    pub fn coverage(&self, n: usize) -> Vec<bool> {
        let mut out = vec![false; n];
        for &t in &self.targets {
            out[t] = true;
        }
        out
    }
}

/// Static edge lists of a graph, arranged for attention.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphIndex {
    companies: usize,
    executives: usize,
    /// Executive targets, company sources.
    exec_links: EdgeList,
    exec_inv_degree: Vec<f64>,
    inter_to_company: BTreeMap<RelationKind, EdgeList>,
    inter_to_executive: BTreeMap<RelationKind, EdgeList>,
    intra: BTreeMap<RelationKind, EdgeList>,
}

impl GraphIndex {
    /// Indexes every stored relation; the implicit relation is supplied
    /// per day through [`ImplicitMessages`].
    pub fn new(graph: &MarketGraph) -> Self {
        let exec_companies = graph.executive_companies();
        let mut link_pairs = Vec::new();
        let mut inv = Vec::with_capacity(exec_companies.len());
        for (e, cs) in exec_companies.iter().enumerate() {
            link_pairs.extend(cs.iter().map(|&c| (e, c)));
            inv.push(if cs.is_empty() { 0.0 } else { 1.0 / cs.len() as f64 });
        }
        let mut inter_to_company = BTreeMap::new();
        let mut inter_to_executive = BTreeMap::new();
        for kind in RelationKind::INTER {
            let pairs = graph.pairs(kind);
            inter_to_company.insert(kind, EdgeList::from_pairs(pairs.clone()));
            inter_to_executive.insert(kind, EdgeList::from_pairs(pairs.into_iter().map(|(c, e)| (e, c)).collect()));
        }
        let mut intra = BTreeMap::new();
        for kind in RelationKind::COMPANY_INTRA.into_iter().chain(RelationKind::EXECUTIVE_INTRA) {
            if kind != RelationKind::Implicit {
                intra.insert(kind, EdgeList::from_pairs(graph.directed_pairs(kind)));
            }
        }
        GraphIndex {
            companies: graph.company_count(),
            executives: graph.executive_count(),
            exec_links: EdgeList::from_pairs(link_pairs),
            exec_inv_degree: inv,
            inter_to_company,
            inter_to_executive,
            intra,
        }
    }

    pub fn companies(&self) -> usize {
        self.companies
    }

    pub fn executives(&self) -> usize {
        self.executives
    }

    fn intra(&self, kind: RelationKind) -> &EdgeList {
        &self.intra[&kind]
    }
}

/// One day's implicit edges with optional per-edge gates (a vector on
/// the tape aligned with `edges`).
#[derive(Clone, Debug, Default)]
pub struct ImplicitMessages {
    pub edges: EdgeList,
    pub gate: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct DualOutput {
    /// `[companies × F′]`.
    pub companies: Var,
    /// `[executives × F′]` when executives take part.
    pub executives: Option<Var>,
}

/// An embedding per relation, with the entities it covers.
#[derive(Clone, Debug)]
pub struct RelationEmbedding {
    pub embedding: Var,
    pub covered: Vec<bool>,
}

fn param<T: Scalar>(tape: &mut Tape<T>, params: &Params<T>, name: &str) -> Result<Var> {
    let t = params
        .get(name)
        .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
    Ok(tape.param(name, t))
}

/// Executives start from the mean of their companies' embeddings.
pub fn init_entity_features<T: Scalar>(tape: &mut Tape<T>, index: &GraphIndex, s: Var) -> Result<Var> {
    if index.exec_inv_degree.iter().any(|&d| d == 0.0) {
        let e = index.exec_inv_degree.iter().position(|&d| d == 0.0).unwrap_or(0);
        return Err(Error::contract(format!("executive {e} has no company link")));
    }
    let links = &index.exec_links;
    let gathered = tape.gather_rows(s, &links.sources)?;
    let summed = tape.segment_sum(gathered, &links.targets, index.executives)?;
    let inv = tape.constant(Tensor::vector(index.exec_inv_degree.iter().map(|&d| T::of(d)).collect()));
    tape.mul_col(summed, inv)
}

/// `h′ = W h` row-wise.
pub fn project<T: Scalar>(tape: &mut Tape<T>, w: Var, h: Var) -> Result<Var> {
    tape.matmul_nt(h, w)
}

/// Attention of each target over its sources under one relation:
/// `e = leaky_relu(a[..F′]·x_target + a[F′..]·x_source)`, normalized per
/// target, `h = tanh(Σ weight · gate · x_source)`. Targets without edges
/// get zero rows.
pub fn neighbor_attention<T: Scalar>(
    tape: &mut Tape<T>,
    a: Var,
    target_features: Var,
    source_features: Var,
    edges: &EdgeList,
    targets: usize,
    gate: Option<Var>,
) -> Result<RelationEmbedding> {
    let width = tape.shape(target_features)[1];
    if edges.is_empty() {
        return Ok(RelationEmbedding {
            embedding: tape.constant(Tensor::zeros(&[targets, width])),
            covered: vec![false; targets],
        });
    }
    let a_t = tape.slice(a, 0, width)?;
    let a_s = tape.slice(a, width, width)?;
    let score_t = tape.matmul(target_features, a_t)?;
    let score_s = tape.matmul(source_features, a_s)?;
    let e_t = tape.gather_rows(score_t, &edges.targets)?;
    let e_s = tape.gather_rows(score_s, &edges.sources)?;
    let e = tape.add(e_t, e_s)?;
    let e = tape.leaky_relu(e, T::of(LEAKY_SLOPE));
    let weights = tape.segment_softmax(e, &edges.targets)?;
    let msgs = tape.gather_rows(source_features, &edges.sources)?;
    let mut msgs = tape.mul_col(msgs, weights)?;
    if let Some(g) = gate {
        msgs = tape.mul_col(msgs, g)?;
    }
    let agg = tape.segment_sum(msgs, &edges.targets, targets)?;
    Ok(RelationEmbedding {
        embedding: tape.tanh(agg),
        covered: edges.coverage(targets),
    })
}

/// Mixes relation embeddings with shared relation scores: per entity, a
/// softmax over the relations that cover it. Entities covered by none
/// keep `fallback`.
pub fn relation_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    embeddings: &[RelationEmbedding],
    scores: &[Var],
    fallback: Var,
) -> Result<Var> {
    if embeddings.len() != scores.len() {
        return Err(Error::contract("one score per relation embedding"));
    }
    if embeddings.is_empty() {
        return Ok(fallback);
    }
    let n = embeddings[0].covered.len();
    let k = embeddings.len();
    let mut mask = Vec::with_capacity(n * k);
    for i in 0..n {
        mask.extend(embeddings.iter().map(|r| r.covered[i]));
    }
    let w = tape.concat(scores)?;
    let w = tape.broadcast_rows(w, n)?;
    let eps = tape.masked_softmax_rows(w, &mask)?;
    let mut out = None;
    for (j, r) in embeddings.iter().enumerate() {
        let col = tape.select_col(eps, j)?;
        let term = tape.mul_col(r.embedding, col)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let mut out = out.expect("at least one relation");
    let uncovered: Vec<T> = (0..n)
        .map(|i| if mask[i * k..(i + 1) * k].iter().any(|&m| m) { T::zero() } else { T::one() })
        .collect();
    if uncovered.iter().any(|&u| u != T::zero()) {
        let ind = tape.constant(Tensor::vector(uncovered));
        let keep = tape.mul_col(fallback, ind)?;
        out = tape.add(out, keep)?;
    }
    Ok(out)
}

/// Population-level importance `mean_u(h_u)·q` of one relation embedding.
pub fn population_score<T: Scalar>(tape: &mut Tape<T>, embedding: Var, q: Var) -> Result<Var> {
    let m = tape.mean_rows(embedding)?;
    tape.dot(m, q)
}

/// Inter-class pass: per-relation attention across classes, fused per
/// entity. Returns `(z_company, z_executive)`.
#[allow(clippy::too_many_arguments)]
pub fn inter_pass<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Params<T>,
    spec: &AttentionSpec,
    index: &GraphIndex,
    layer: usize,
    hc: Var,
    he: Var,
) -> Result<(Var, Var)> {
    let (nc, ne) = (index.companies, index.executives);
    let mut to_c = Vec::new();
    let mut to_e = Vec::new();
    let mut scores = Vec::new();
    let q_c = param(tape, params, &layer_name(INTER_Q_COMPANY, layer))?;
    let q_e = param(tape, params, &layer_name(INTER_Q_EXECUTIVE, layer))?;
    for &kind in spec.inter() {
        let (ec, ee) = (&index.inter_to_company[&kind], &index.inter_to_executive[&kind]);
        if ec.is_empty() {
            continue;
        }
        let a = param(tape, params, &layer_name(&attention_name("inter", kind), layer))?;
        let rc = neighbor_attention(tape, a, hc, he, ec, nc, None)?;
        let re = neighbor_attention(tape, a, he, hc, ee, ne, None)?;
        let wc = population_score(tape, rc.embedding, q_c)?;
        let we = population_score(tape, re.embedding, q_e)?;
        scores.push(tape.add(wc, we)?);
        to_c.push(rc);
        to_e.push(re);
    }
    let zc = relation_fuse(tape, &to_c, &scores, hc)?;
    let ze = relation_fuse(tape, &to_e, &scores, he)?;
    Ok((zc, ze))
}

/// Intra-class pass for one entity class.
#[allow(clippy::too_many_arguments)]
pub fn intra_pass<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Params<T>,
    kinds: &[RelationKind],
    edges: &dyn Fn(RelationKind) -> (EdgeList, Option<Var>),
    names: (&str, &str),
    layer: usize,
    z: Var,
) -> Result<Var> {
    if kinds.is_empty() {
        return Ok(z);
    }
    let n = tape.shape(z)[0];
    let w = param(tape, params, &layer_name(names.0, layer))?;
    let q = param(tape, params, &layer_name(names.1, layer))?;
    let wz = project(tape, w, z)?;
    let mut embeddings = Vec::new();
    let mut scores = Vec::new();
    for &kind in kinds {
        let (list, gate) = edges(kind);
        if list.is_empty() {
            continue;
        }
        let a = param(tape, params, &layer_name(&attention_name("intra", kind), layer))?;
        let r = neighbor_attention(tape, a, wz, wz, &list, n, gate)?;
        scores.push(population_score(tape, r.embedding, q)?);
        embeddings.push(r);
    }
    relation_fuse(tape, &embeddings, &scores, z)
}

/// Relational embeddings of all companies from their sequential
/// embeddings `s` (`[companies × F]`).
pub fn dual_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Params<T>,
    spec: &AttentionSpec,
    index: &GraphIndex,
    s: Var,
    implicit: &ImplicitMessages,
) -> Result<DualOutput> {
    if tape.shape(s) != [index.companies, spec.input_width] {
        return Err(Error::dim("dual_forward", tape.shape(s), &[index.companies, spec.input_width]));
    }
    if !spec.dual {
        return flat_forward(tape, params, spec, index, s, implicit);
    }
    let executives = spec.use_executives && index.executives > 0;
    let mut hc = s;
    let mut he = if executives { Some(init_entity_features(tape, index, s)?) } else { None };
    let company_edges = |kind: RelationKind| {
        if kind == RelationKind::Implicit {
            (implicit.edges.clone(), implicit.gate)
        } else {
            (index.intra(kind).clone(), None)
        }
    };
    let exec_edges = |kind: RelationKind| (index.intra(kind).clone(), None);
    for layer in 0..spec.layers.max(1) {
        let wc = param(tape, params, &layer_name(PROJ_COMPANY, layer))?;
        let pc = project(tape, wc, hc)?;
        let (zc, ze) = match he {
            Some(h) => {
                let we = param(tape, params, &layer_name(PROJ_EXECUTIVE, layer))?;
                let pe = project(tape, we, h)?;
                let (zc, ze) = inter_pass(tape, params, spec, index, layer, pc, pe)?;
                (zc, Some(ze))
            }
            None => (pc, None),
        };
        hc = intra_pass(
            tape,
            params,
            &spec.company_intra,
            &company_edges,
            (INTRA_W_COMPANY, INTRA_Q_COMPANY),
            layer,
            zc,
        )?;
        he = match ze {
            Some(z) => Some(intra_pass(
                tape,
                params,
                spec.executive_intra(),
                &exec_edges,
                (INTRA_W_EXECUTIVE, INTRA_Q_EXECUTIVE),
                layer,
                z,
            )?),
            None => None,
        };
    }
    Ok(DualOutput {
        companies: hc,
        executives: he,
    })
}

/// Single attention over the multiset union of every active company
/// relation plus the company-executive links.
fn flat_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Params<T>,
    spec: &AttentionSpec,
    index: &GraphIndex,
    s: Var,
    implicit: &ImplicitMessages,
) -> Result<DualOutput> {
    let nc = index.companies;
    let wc = param(tape, params, PROJ_COMPANY)?;
    let hc = project(tape, wc, s)?;
    let a = param(tape, params, FLAT_A)?;
    let width = spec.hidden;
    let a_t = tape.slice(a, 0, width)?;
    let a_s = tape.slice(a, width, width)?;
    let score_t = tape.matmul(hc, a_t)?;
    let score_c = tape.matmul(hc, a_s)?;

    // Company sources: stored relations first, then implicit edges.
    let (mut tc, mut sc) = (Vec::new(), Vec::new());
    for &kind in &spec.company_intra {
        if kind != RelationKind::Implicit {
            let l = index.intra(kind);
            tc.extend_from_slice(&l.targets);
            sc.extend_from_slice(&l.sources);
        }
    }
    let plain = tc.len();
    if spec.company_intra.contains(&RelationKind::Implicit) {
        tc.extend_from_slice(&implicit.edges.targets);
        sc.extend_from_slice(&implicit.edges.sources);
    }
    let gated = spec.company_intra.contains(&RelationKind::Implicit) && !implicit.edges.is_empty();

    let executive_features = if spec.use_executives && index.executives > 0 {
        let we = param(tape, params, PROJ_EXECUTIVE)?;
        let feats = init_entity_features(tape, index, s)?;
        Some(project(tape, we, feats)?)
    } else {
        None
    };
    let (mut te, mut se) = (Vec::new(), Vec::new());
    if executive_features.is_some() {
        for kind in spec.inter() {
            let l = &index.inter_to_company[kind];
            te.extend_from_slice(&l.targets);
            se.extend_from_slice(&l.sources);
        }
    }

    let mut parts = Vec::new();
    if !tc.is_empty() {
        let t = tape.gather_rows(score_t, &tc)?;
        let u = tape.gather_rows(score_c, &sc)?;
        parts.push(tape.add(t, u)?);
    }
    if let (Some(he), false) = (executive_features, te.is_empty()) {
        let score_e = tape.matmul(he, a_s)?;
        let t = tape.gather_rows(score_t, &te)?;
        let u = tape.gather_rows(score_e, &se)?;
        parts.push(tape.add(t, u)?);
    }
    let covered: Vec<bool> = {
        let mut c = vec![false; nc];
        for &t in tc.iter().chain(&te) {
            c[t] = true;
        }
        c
    };
    if parts.is_empty() {
        return Ok(DualOutput {
            companies: hc,
            executives: executive_features,
        });
    }
    let e = tape.concat(&parts)?;
    let e = tape.leaky_relu(e, T::of(LEAKY_SLOPE));
    let all_targets: Vec<usize> = tc.iter().chain(&te).copied().collect();
    let weights = tape.segment_softmax(e, &all_targets)?;

    let mut agg = None;
    if !tc.is_empty() {
        let mut w = tape.slice(weights, 0, tc.len())?;
        if let (true, Some(g)) = (gated, implicit.gate) {
            let ones = if plain > 0 {
                vec![tape.constant(Tensor::full(&[plain], T::one())), g]
            } else {
                vec![g]
            };
            let mult = tape.concat(&ones)?;
            w = tape.mul(w, mult)?;
        }
        let m = tape.gather_rows(hc, &sc)?;
        let m = tape.mul_col(m, w)?;
        agg = Some(tape.segment_sum(m, &tc, nc)?);
    }
    if let (Some(he), false) = (executive_features, te.is_empty()) {
        let w = tape.slice(weights, tc.len(), te.len())?;
        let m = tape.gather_rows(he, &se)?;
        let m = tape.mul_col(m, w)?;
        let part = tape.segment_sum(m, &te, nc)?;
        agg = Some(match agg {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    let mut h = tape.tanh(agg.expect("non-empty edge set"));
    if covered.iter().any(|&c| !c) {
        let ind = covered.iter().map(|&c| if c { T::zero() } else { T::one() }).collect();
        let ind = tape.constant(Tensor::vector(ind));
        let keep = tape.mul_col(hc, ind)?;
        h = tape.add(h, keep)?;
    }
    Ok(DualOutput {
        companies: h,
        executives: executive_features,
    })
}
