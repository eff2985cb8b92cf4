use std::collections::BTreeSet;

use super::{MarketGraph, RelationKind};

impl MarketGraph {
    /// Returns a copy with CEC and CEEC recomputed from the inter-class and
    /// intra-executive edges.
    ///
    /// CEC joins two distinct companies sharing an executive. CEEC joins two
    /// distinct companies whose executives are classmates or colleagues.
    /// The two sets are independent; a pair may be in both.
    pub fn derive_meta_relations(&self) -> MarketGraph {
        let exec_companies = self.executive_companies();

        let mut cec = BTreeSet::new();
        for companies in &exec_companies {
            for (i, &a) in companies.iter().enumerate() {
                for &b in &companies[i + 1..] {
                    cec.insert((a.min(b), a.max(b)));
                }
            }
        }

        let mut ceec = BTreeSet::new();
        for kind in RelationKind::EXECUTIVE_INTRA {
            for &(e1, e2) in &self.edges[&kind] {
                for &a in &exec_companies[e1] {
                    for &b in &exec_companies[e2] {
                        if a != b {
                            ceec.insert((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }

        let mut g = self.clone();
        g.edges.insert(RelationKind::Cec, cec);
        g.edges.insert(RelationKind::Ceec, ceec);
        g
    }
}
