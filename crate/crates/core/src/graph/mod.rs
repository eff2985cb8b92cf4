//! Bi-typed market knowledge graph.
//!
//! Companies and executives are the two entity classes. Every relation kind
//! joins a fixed pair of entity types; same-type kinds are stored as
//! unordered pairs `(min, max)`, company–executive kinds as
//! `(company, executive)`. Implicit company edges are directed and live in
//! a separate per-day slot because they are recomputed from embeddings.

mod implicit;
mod meta;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use implicit::{infer_implicit_edges, ImplicitEdge, ImplicitRelationParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Company,
    Executive,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKind::Company => f.write_str("company"),
            EntityKind::Executive => f.write_str("executive"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: usize,
}

impl EntityId {
    pub fn company(index: usize) -> Self {
        EntityId {
            kind: EntityKind::Company,
            index,
        }
    }

    pub fn executive(index: usize) -> Self {
        EntityId {
            kind: EntityKind::Executive,
            index,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.kind, self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    IndustryCategory,
    SupplyChain,
    BusinessPartnership,
    Investment,
    /// Company–Executive–Company.
    Cec,
    /// Company–Executive–Executive–Company.
    Ceec,
    Implicit,
    Classmate,
    Colleague,
    Management,
    ExecInvestment,
}

impl RelationKind {
    pub const ALL: [RelationKind; 11] = [
        RelationKind::IndustryCategory,
        RelationKind::SupplyChain,
        RelationKind::BusinessPartnership,
        RelationKind::Investment,
        RelationKind::Cec,
        RelationKind::Ceec,
        RelationKind::Implicit,
        RelationKind::Classmate,
        RelationKind::Colleague,
        RelationKind::Management,
        RelationKind::ExecInvestment,
    ];

    pub const EXPLICIT: [RelationKind; 4] = [
        RelationKind::IndustryCategory,
        RelationKind::SupplyChain,
        RelationKind::BusinessPartnership,
        RelationKind::Investment,
    ];

    pub const COMPANY_INTRA: [RelationKind; 7] = [
        RelationKind::IndustryCategory,
        RelationKind::SupplyChain,
        RelationKind::BusinessPartnership,
        RelationKind::Investment,
        RelationKind::Cec,
        RelationKind::Ceec,
        RelationKind::Implicit,
    ];

    pub const EXECUTIVE_INTRA: [RelationKind; 2] = [RelationKind::Classmate, RelationKind::Colleague];

    pub const INTER: [RelationKind; 2] = [RelationKind::Management, RelationKind::ExecInvestment];

    /// Endpoint types joined by this kind.
    pub fn signature(self) -> (EntityKind, EntityKind) {
        use EntityKind::*;
        match self {
            RelationKind::Classmate | RelationKind::Colleague => (Executive, Executive),
            RelationKind::Management | RelationKind::ExecInvestment => (Company, Executive),
            _ => (Company, Company),
        }
    }

    pub fn is_inter_class(self) -> bool {
        matches!(self, RelationKind::Management | RelationKind::ExecInvestment)
    }

    pub fn is_explicit(self) -> bool {
        RelationKind::EXPLICIT.contains(&self)
    }

    pub fn is_meta(self) -> bool {
        matches!(self, RelationKind::Cec | RelationKind::Ceec)
    }

    /// Kinds that can appear in an edge file.
    pub fn is_loadable(self) -> bool {
        !self.is_meta() && self != RelationKind::Implicit
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::IndustryCategory => "industry_category",
            RelationKind::SupplyChain => "supply_chain",
            RelationKind::BusinessPartnership => "business_partnership",
            RelationKind::Investment => "investment",
            RelationKind::Cec => "cec",
            RelationKind::Ceec => "ceec",
            RelationKind::Implicit => "implicit",
            RelationKind::Classmate => "classmate",
            RelationKind::Colleague => "colleague",
            RelationKind::Management => "management",
            RelationKind::ExecInvestment => "exec_investment",
        }
    }

    pub fn parse(name: &str) -> Option<RelationKind> {
        RelationKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypedEdge {
    pub kind: RelationKind,
    pub a: EntityId,
    pub b: EntityId,
}

impl TypedEdge {
    pub fn new(kind: RelationKind, a: EntityId, b: EntityId) -> Self {
        TypedEdge { kind, a, b }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("{kind} edge references undeclared entity {endpoint}")]
    DanglingEndpoint { kind: RelationKind, endpoint: EntityId },
    #[error("{kind} edge {a} – {b} violates its endpoint signature")]
    SignatureMismatch {
        kind: RelationKind,
        a: EntityId,
        b: EntityId,
    },
    #[error("duplicate {kind} edge {a} – {b}")]
    DuplicateEdge {
        kind: RelationKind,
        a: EntityId,
        b: EntityId,
    },
    #[error("{kind} self-loop on {entity}")]
    SelfLoop { kind: RelationKind, entity: EntityId },
    #[error("{kind} edges are derived and cannot be loaded")]
    DerivedKind { kind: RelationKind },
    #[error("relation {kind} does not apply to {entity}")]
    KindMismatch { kind: RelationKind, entity: EntityId },
    #[error("executive {0} has no company link")]
    OrphanExecutive(EntityId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketGraph {
    company_count: usize,
    executive_count: usize,
    edges: BTreeMap<RelationKind, BTreeSet<(usize, usize)>>,
    implicit: Vec<ImplicitEdge<f64>>,
    implicit_day: Option<usize>,
}

impl MarketGraph {
    /// Validates and stores a typed edge list.
    ///
    /// Same-type edges may be given in either endpoint order; inter-class
    /// edges may put the executive first. Implicit and meta kinds are
    /// rejected: they are produced by [`MarketGraph::derive_meta_relations`]
    /// and [`infer_implicit_edges`].
    pub fn build(
        company_count: usize,
        executive_count: usize,
        edges: &[TypedEdge],
    ) -> Result<Self, GraphError> {
        let mut g = MarketGraph {
            company_count,
            executive_count,
            edges: RelationKind::ALL
                .iter()
                .filter(|k| **k != RelationKind::Implicit)
                .map(|&k| (k, BTreeSet::new()))
                .collect(),
            implicit: Vec::new(),
            implicit_day: None,
        };
        for e in edges {
            if !e.kind.is_loadable() {
                return Err(GraphError::DerivedKind { kind: e.kind });
            }
            g.insert(*e)?;
        }
        Ok(g)
    }

    fn insert(&mut self, e: TypedEdge) -> Result<(), GraphError> {
        for ep in [e.a, e.b] {
            if ep.index >= self.count(ep.kind) {
                return Err(GraphError::DanglingEndpoint {
                    kind: e.kind,
                    endpoint: ep,
                });
            }
        }
        let (ta, tb) = e.kind.signature();
        let key = if ta == tb {
            if e.a.kind != ta || e.b.kind != tb {
                return Err(GraphError::SignatureMismatch {
                    kind: e.kind,
                    a: e.a,
                    b: e.b,
                });
            }
            if e.a.index == e.b.index {
                return Err(GraphError::SelfLoop {
                    kind: e.kind,
                    entity: e.a,
                });
            }
            (e.a.index.min(e.b.index), e.a.index.max(e.b.index))
        } else if e.a.kind == ta && e.b.kind == tb {
            (e.a.index, e.b.index)
        } else if e.a.kind == tb && e.b.kind == ta {
            (e.b.index, e.a.index)
        } else {
            return Err(GraphError::SignatureMismatch {
                kind: e.kind,
                a: e.a,
                b: e.b,
            });
        };
        if !self.edges.get_mut(&e.kind).expect("all kinds present").insert(key) {
            return Err(GraphError::DuplicateEdge {
                kind: e.kind,
                a: e.a,
                b: e.b,
            });
        }
        Ok(())
    }

    pub fn company_count(&self) -> usize {
        self.company_count
    }

    pub fn executive_count(&self) -> usize {
        self.executive_count
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Company => self.company_count,
            EntityKind::Executive => self.executive_count,
        }
    }

    /// Stored pairs of a kind; for Implicit, the current day's directed
    /// `(receiver, neighbor)` pairs.
    pub fn pairs(&self, kind: RelationKind) -> Vec<(usize, usize)> {
        if kind == RelationKind::Implicit {
            return self.implicit.iter().map(|e| (e.src, e.dst)).collect();
        }
        self.edges[&kind].iter().copied().collect()
    }

    pub fn edge_count(&self, kind: RelationKind) -> usize {
        if kind == RelationKind::Implicit {
            return self.implicit.len();
        }
        self.edges[&kind].len()
    }

    pub fn contains(&self, kind: RelationKind, a: usize, b: usize) -> bool {
        match kind {
            RelationKind::Implicit => self.implicit.iter().any(|e| e.src == a && e.dst == b),
            k if k.is_inter_class() => self.edges[&k].contains(&(a, b)),
            k => self.edges[&k].contains(&(a.min(b), a.max(b))),
        }
    }

    /// All loadable edges in kind order, for serialization.
    pub fn typed_edges(&self) -> Vec<TypedEdge> {
        let mut out = Vec::new();
        for (&kind, set) in &self.edges {
            if !kind.is_loadable() {
                continue;
            }
            let (ta, tb) = kind.signature();
            for &(a, b) in set {
                out.push(TypedEdge::new(
                    kind,
                    EntityId { kind: ta, index: a },
                    EntityId { kind: tb, index: b },
                ));
            }
        }
        out
    }

    /// Companies each executive links to through any inter-class edge,
    /// ascending.
    pub fn executive_companies(&self) -> Vec<Vec<usize>> {
        let mut out = vec![BTreeSet::new(); self.executive_count];
        for kind in RelationKind::INTER {
            for &(c, e) in &self.edges[&kind] {
                out[e].insert(c);
            }
        }
        out.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Fails on the first executive without a company link.
    pub fn check_executives_linked(&self) -> Result<(), GraphError> {
        match self.executive_companies().iter().position(Vec::is_empty) {
            Some(e) => Err(GraphError::OrphanExecutive(EntityId::executive(e))),
            None => Ok(()),
        }
    }

    /// Neighbors of `entity` under `kind`, ascending by index. For Implicit
    /// these are the `j` with an edge `(entity, j)`.
    pub fn neighbors(&self, entity: EntityId, kind: RelationKind) -> Result<Vec<EntityId>, GraphError> {
        let (ta, tb) = kind.signature();
        if entity.kind != ta && entity.kind != tb {
            return Err(GraphError::KindMismatch { kind, entity });
        }
        if entity.index >= self.count(entity.kind) {
            return Err(GraphError::DanglingEndpoint { kind, endpoint: entity });
        }
        let i = entity.index;
        let mut out: Vec<EntityId> = if kind == RelationKind::Implicit {
            self.implicit
                .iter()
                .filter(|e| e.src == i)
                .map(|e| EntityId::company(e.dst))
                .collect()
        } else if kind.is_inter_class() {
            if entity.kind == EntityKind::Company {
                self.edges[&kind]
                    .iter()
                    .filter(|(c, _)| *c == i)
                    .map(|&(_, e)| EntityId::executive(e))
                    .collect()
            } else {
                self.edges[&kind]
                    .iter()
                    .filter(|(_, e)| *e == i)
                    .map(|&(c, _)| EntityId::company(c))
                    .collect()
            }
        } else {
            self.edges[&kind]
                .iter()
                .filter_map(|&(a, b)| match (a == i, b == i) {
                    (true, _) => Some(b),
                    (_, true) => Some(a),
                    _ => None,
                })
                .map(|j| EntityId { kind: ta, index: j })
                .collect()
        };
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Directed `(target, neighbor)` pairs for a same-type kind: both
    /// orientations of each unordered pair, or the implicit edges as-is.
    pub fn directed_pairs(&self, kind: RelationKind) -> Vec<(usize, usize)> {
        if kind == RelationKind::Implicit {
            return self.pairs(kind);
        }
        let mut out: Vec<(usize, usize)> = self.edges[&kind]
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect();
        out.sort();
        out
    }

    pub fn implicit_edges(&self) -> &[ImplicitEdge<f64>] {
        &self.implicit
    }

    pub fn implicit_day(&self) -> Option<usize> {
        self.implicit_day
    }

    /// Replaces the previous day's implicit edges.
    pub fn set_implicit(&mut self, day: usize, edges: Vec<ImplicitEdge<f64>>) {
        self.implicit = edges;
        self.implicit_day = Some(day);
    }

    /// Drops every edge of the given kinds (ablations).
    pub fn without(&self, kinds: &[RelationKind]) -> MarketGraph {
        let mut g = self.clone();
        for k in kinds {
            if *k == RelationKind::Implicit {
                g.implicit.clear();
            } else if let Some(set) = g.edges.get_mut(k) {
                set.clear();
            }
        }
        g
    }
}
