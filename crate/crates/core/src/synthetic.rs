//! Planted block-model tripartite graphs with known ground truth.
//!
//! Every user, item and bundle belongs to one of `blocks` communities. Each
//! relation draws an edge with probability `p_in` inside a community and
//! `p_out` across communities. A fraction of every relation's true edges is
//! then withheld from the observed graph.
//!
//! With `popularity > 0` every node also draws a log-normal activity weight
//! (mean one) that multiplies its edge probabilities, giving heavy-tailed
//! degrees like real interaction data.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeSpace, NodeType, Pair, RelationKind, TripartiteGraph};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDensity {
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_bundles: usize,
    pub blocks: usize,
    pub ub: RelationDensity,
    pub ui: RelationDensity,
    pub bi: RelationDensity,
    /// Fraction of true edges per relation withheld from the observed graph.
    pub holdout: [f64; 3],
    /// Log-normal sigma of per-node activity weights; 0 disables them.
    #[serde(default)]
    pub popularity: f64,
}

impl PlantedSpec {
    /// 60 users, 120 items, 30 bundles in 5 communities; 30% of user-bundle
    /// and 20% of the other true edges withheld.
    pub fn small() -> Self {
        PlantedSpec {
            num_users: 60,
            num_items: 120,
            num_bundles: 30,
            blocks: 5,
            ub: RelationDensity {
                p_in: 0.5,
                p_out: 0.02,
            },
            ui: RelationDensity {
                p_in: 0.25,
                p_out: 0.01,
            },
            bi: RelationDensity {
                p_in: 0.4,
                p_out: 0.01,
            },
            holdout: [0.3, 0.2, 0.2],
            popularity: 0.0,
        }
    }

    fn density(&self, kind: RelationKind) -> RelationDensity {
        match kind {
            RelationKind::UserBundle => self.ub,
            RelationKind::UserItem => self.ui,
            RelationKind::BundleItem => self.bi,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::config("blocks", "must be >= 1"));
        }
        for kind in RelationKind::ALL {
            let d = self.density(kind);
            for (name, p) in [("p_in", d.p_in), ("p_out", d.p_out)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(
                        format!("{}.{name}", kind.tag()),
                        "must be in [0, 1]",
                    ));
                }
            }
            let h = self.holdout[kind.index()];
            if !(0.0..1.0).contains(&h) {
                return Err(Error::config(
                    format!("holdout.{}", kind.tag()),
                    "must be in [0, 1)",
                ));
            }
        }
        if !(self.popularity >= 0.0 && self.popularity.is_finite()) {
            return Err(Error::config("popularity", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub observed: TripartiteGraph,
    /// Withheld true edges per relation, sorted.
    pub held_out: [Vec<Pair>; 3],
    /// Community of every node, indexed by global id.
    pub block_of: Vec<usize>,
}

impl PlantedGraph {
    pub fn is_held_out(&self, kind: RelationKind, pair: Pair) -> bool {
        self.held_out[kind.index()].binary_search(&pair).is_ok()
    }

    pub fn same_block(&self, kind: RelationKind, (s, d): Pair) -> bool {
        let space = self.observed.space();
        self.block_of[space.global(kind.src_type(), s)]
            == self.block_of[space.global(kind.dst_type(), d)]
    }

    /// Withheld user-bundle edges grouped by user.
    pub fn held_out_user_bundles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.observed.space().num_users];
        for &(u, b) in &self.held_out[RelationKind::UserBundle.index()] {
            out[u].push(b);
        }
        out
    }
}

/// Draws a planted graph. Nodes are assigned to communities round-robin; a
/// node whose true edges are all withheld keeps one of them.
pub fn planted_graph(spec: &PlantedSpec, seed: u64) -> Result<PlantedGraph> {
    spec.validate()?;
    let space = NodeSpace::new(spec.num_users, spec.num_items, spec.num_bundles)?;
    let block_of: Vec<usize> = (0..space.total())
        .map(|g| space.locate(g).1 % spec.blocks)
        .collect();
    let block = |ty: NodeType, local: usize| block_of[space.global(ty, local)];
    let weights: Vec<f64> = if spec.popularity > 0.0 {
        let sigma = spec.popularity;
        let dist = LogNormal::new(-0.5 * sigma * sigma, sigma)
            .map_err(|e| Error::config("popularity", e.to_string()))?;
        let mut rng = rng_for(seed, "popularity");
        (0..space.total()).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![1.0; space.total()]
    };
    let weight = |ty: NodeType, local: usize| weights[space.global(ty, local)];

    let mut lists: [Vec<Pair>; 3] = Default::default();
    let mut held_out: [Vec<Pair>; 3] = Default::default();
    for kind in RelationKind::ALL {
        let mut rng = rng_for(seed, kind.tag());
        let d = spec.density(kind);
        let (src_n, dst_n) = (space.count(kind.src_type()), space.count(kind.dst_type()));
        let mut truth = Vec::new();
        for s in 0..src_n {
            for t in 0..dst_n {
                let base = if block(kind.src_type(), s) == block(kind.dst_type(), t) {
                    d.p_in
                } else {
                    d.p_out
                };
                let p = base * weight(kind.src_type(), s) * weight(kind.dst_type(), t);
                if rng.random::<f64>() < p {
                    truth.push((s, t));
                }
            }
        }
        truth.shuffle(&mut rng);
        let n_hold = (spec.holdout[kind.index()] * truth.len() as f64).round() as usize;
        let (hold, keep) = truth.split_at(n_hold);
        let mut keep = keep.to_vec();
        let mut hold: Vec<Pair> = hold.to_vec();

        // give back one withheld edge to any source left without edges
        let covered: HashSet<usize> = keep.iter().map(|p| p.0).collect();
        let mut i = 0;
        let mut restored = HashSet::new();
        while i < hold.len() {
            let s = hold[i].0;
            if !covered.contains(&s) && restored.insert(s) {
                keep.push(hold.swap_remove(i));
            } else {
                i += 1;
            }
        }
        hold.sort_unstable();
        lists[kind.index()] = keep;
        held_out[kind.index()] = hold;
    }
    Ok(PlantedGraph {
        observed: TripartiteGraph::new(space, lists)?,
        held_out,
        block_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_disjoint() {
        let spec = PlantedSpec::small();
        let a = planted_graph(&spec, 3).unwrap();
        let b = planted_graph(&spec, 3).unwrap();
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.held_out, b.held_out);
        for kind in RelationKind::ALL {
            assert!(a.held_out[kind.index()]
                .iter()
                .all(|&p| !a.observed.contains(kind, p)));
        }
    }

    #[test]
    fn holdout_fraction_and_structure() {
        let g = planted_graph(&PlantedSpec::small(), 11).unwrap();
        let kind = RelationKind::UserBundle;
        let held = g.held_out[kind.index()].len() as f64;
        let total = held + g.observed.edges(kind).len() as f64;
        assert!((held / total - 0.3).abs() < 0.03, "{}", held / total);
        let inside = g
            .observed
            .edges(kind)
            .iter()
            .filter(|&p| g.same_block(kind, p))
            .count();
        assert!(inside as f64 > 0.7 * g.observed.edges(kind).len() as f64);
        // a user with any true bundle keeps at least one observed
        let withheld = g.held_out_user_bundles();
        for (u, &d) in g.observed.src_degrees(kind).iter().enumerate() {
            assert!(d > 0 || withheld[u].is_empty(), "user {u}");
        }
    }
}
