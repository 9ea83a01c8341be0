//! The unified user-bundle-item relation graph.
//!
//! Nodes of the three types share one global index space: users occupy
//! `[0, N)`, items `[N, N + L)` and bundles `[N + L, N + L + K)`. Each of the
//! three relations stores its pairs with *local* ids in the relation's own
//! (source, destination) orientation:
//!
//! | relation | source | destination |
//! |----------|--------|-------------|
//! | `ub`     | user   | bundle      |
//! | `ui`     | user   | item        |
//! | `bi`     | bundle | item        |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeSpace {
    pub num_users: usize,
    pub num_items: usize,
    pub num_bundles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    User,
    Item,
    Bundle,
}

impl NodeType {
    pub fn name(self) -> &'static str {
        match self {
            NodeType::User => "user",
            NodeType::Item => "item",
            NodeType::Bundle => "bundle",
        }
    }
}

impl FromStr for NodeType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "user" => Ok(NodeType::User),
            "item" => Ok(NodeType::Item),
            "bundle" => Ok(NodeType::Bundle),
            other => Err(format!("unknown node type `{other}`")),
        }
    }
}

impl NodeSpace {
    pub fn new(num_users: usize, num_items: usize, num_bundles: usize) -> Result<Self> {
        if num_users == 0 || num_items == 0 || num_bundles == 0 {
            return Err(Error::EmptyNodeSpace {
                users: num_users,
                items: num_items,
                bundles: num_bundles,
            });
        }
        Ok(NodeSpace {
            num_users,
            num_items,
            num_bundles,
        })
    }

    #[inline]
    pub fn total(&self) -> usize {
        self.num_users + self.num_items + self.num_bundles
    }

    #[inline]
    pub fn count(&self, ty: NodeType) -> usize {
        match ty {
            NodeType::User => self.num_users,
            NodeType::Item => self.num_items,
            NodeType::Bundle => self.num_bundles,
        }
    }

    /// First global index of the given node type.
    #[inline]
    pub fn offset(&self, ty: NodeType) -> usize {
        match ty {
            NodeType::User => 0,
            NodeType::Item => self.num_users,
            NodeType::Bundle => self.num_users + self.num_items,
        }
    }

    #[inline]
    pub fn global(&self, ty: NodeType, local: usize) -> usize {
        self.offset(ty) + local
    }

    pub fn locate(&self, global: usize) -> (NodeType, usize) {
        if global < self.num_users {
            (NodeType::User, global)
        } else if global < self.num_users + self.num_items {
            (NodeType::Item, global - self.num_users)
        } else {
            (NodeType::Bundle, global - self.num_users - self.num_items)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    #[serde(rename = "ub")]
    UserBundle,
    #[serde(rename = "ui")]
    UserItem,
    #[serde(rename = "bi")]
    BundleItem,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::UserBundle,
        RelationKind::UserItem,
        RelationKind::BundleItem,
    ];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            RelationKind::UserBundle => 0,
            RelationKind::UserItem => 1,
            RelationKind::BundleItem => 2,
        }
    }

    pub fn src_type(self) -> NodeType {
        match self {
            RelationKind::UserBundle | RelationKind::UserItem => NodeType::User,
            RelationKind::BundleItem => NodeType::Bundle,
        }
    }

    pub fn dst_type(self) -> NodeType {
        match self {
            RelationKind::UserBundle => NodeType::Bundle,
            RelationKind::UserItem | RelationKind::BundleItem => NodeType::Item,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            RelationKind::UserBundle => "ub",
            RelationKind::UserItem => "ui",
            RelationKind::BundleItem => "bi",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ub" => Ok(RelationKind::UserBundle),
            "ui" => Ok(RelationKind::UserItem),
            "bi" => Ok(RelationKind::BundleItem),
            other => Err(format!("unknown relation `{other}`")),
        }
    }
}

pub type Pair = (usize, usize);

/// Sorted, duplicate-free pairs of one relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    kind: RelationKind,
    pairs: Vec<Pair>,
}

impl EdgeSet {
    fn from_unsorted(kind: RelationKind, mut pairs: Vec<Pair>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        EdgeSet { kind, pairs }
    }

    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: Pair) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = Pair> + '_ {
        self.pairs.iter().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Degrees {
    src: Vec<usize>,
    dst: Vec<usize>,
}

/// Per-relation sets of pairs to add and to drop relative to a factual graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ViewDelta {
    add: [Vec<Pair>; 3],
    drop: [Vec<Pair>; 3],
}

impl ViewDelta {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the add and drop sets of one relation. Both are stored sorted
    /// and deduplicated.
    pub fn set(&mut self, kind: RelationKind, mut add: Vec<Pair>, mut drop: Vec<Pair>) {
        add.sort_unstable();
        add.dedup();
        drop.sort_unstable();
        drop.dedup();
        self.add[kind.index()] = add;
        self.drop[kind.index()] = drop;
    }

    pub fn added(&self, kind: RelationKind) -> &[Pair] {
        &self.add[kind.index()]
    }

    pub fn dropped(&self, kind: RelationKind) -> &[Pair] {
        &self.drop[kind.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.add.iter().chain(&self.drop).all(Vec::is_empty)
    }

    /// The delta that undoes this one.
    pub fn inverse(&self) -> ViewDelta {
        ViewDelta {
            add: self.drop.clone(),
            drop: self.add.clone(),
        }
    }
}

/// Immutable heterogeneous graph over users, items and bundles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripartiteGraph {
    space: NodeSpace,
    edges: [EdgeSet; 3],
    degrees: [Degrees; 3],
}

/// Builds a graph from raw edge lists (local ids). Duplicates are dropped.
pub fn build_graph(
    space: NodeSpace,
    ub: &[Pair],
    ui: &[Pair],
    bi: &[Pair],
) -> Result<TripartiteGraph> {
    TripartiteGraph::new(space, [ub.to_vec(), ui.to_vec(), bi.to_vec()])
}

impl TripartiteGraph {
    /// `lists` is indexed by [`RelationKind::index`].
    pub fn new(space: NodeSpace, lists: [Vec<Pair>; 3]) -> Result<Self> {
        NodeSpace::new(space.num_users, space.num_items, space.num_bundles)?;
        let [ub, ui, bi] = lists;
        let mut sets = Vec::with_capacity(3);
        for (kind, list) in RelationKind::ALL.into_iter().zip([ub, ui, bi]) {
            let src_limit = space.count(kind.src_type());
            let dst_limit = space.count(kind.dst_type());
            if let Some(&(src, dst)) = list
                .iter()
                .find(|&&(s, d)| s >= src_limit || d >= dst_limit)
            {
                return Err(Error::EdgeOutOfBounds {
                    relation: kind,
                    src,
                    dst,
                    src_limit,
                    dst_limit,
                });
            }
            sets.push(EdgeSet::from_unsorted(kind, list));
        }
        let edges: [EdgeSet; 3] = sets.try_into().expect("three relations");
        Ok(Self::from_sets(space, edges))
    }

    fn from_sets(space: NodeSpace, edges: [EdgeSet; 3]) -> Self {
        let degrees = RelationKind::ALL.map(|kind| {
            let set = &edges[kind.index()];
            let mut src = vec![0; space.count(kind.src_type())];
            let mut dst = vec![0; space.count(kind.dst_type())];
            for (s, d) in set.iter() {
                src[s] += 1;
                dst[d] += 1;
            }
            Degrees { src, dst }
        });
        TripartiteGraph {
            space,
            edges,
            degrees,
        }
    }

    pub fn space(&self) -> NodeSpace {
        self.space
    }

    pub fn edges(&self, kind: RelationKind) -> &EdgeSet {
        &self.edges[kind.index()]
    }

    pub fn contains(&self, kind: RelationKind, pair: Pair) -> bool {
        self.edges(kind).contains(pair)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(EdgeSet::len).sum()
    }

    pub fn src_degree(&self, kind: RelationKind, src: usize) -> usize {
        self.degrees[kind.index()].src[src]
    }

    pub fn dst_degree(&self, kind: RelationKind, dst: usize) -> usize {
        self.degrees[kind.index()].dst[dst]
    }

    pub fn src_degrees(&self, kind: RelationKind) -> &[usize] {
        &self.degrees[kind.index()].src
    }

    pub fn dst_degrees(&self, kind: RelationKind) -> &[usize] {
        &self.degrees[kind.index()].dst
    }

    /// Degree of a node summed over every relation it takes part in.
    pub fn total_degree(&self, ty: NodeType, local: usize) -> usize {
        RelationKind::ALL
            .into_iter()
            .map(|kind| {
                let mut d = 0;
                if kind.src_type() == ty {
                    d += self.src_degree(kind, local);
                }
                if kind.dst_type() == ty {
                    d += self.dst_degree(kind, local);
                }
                d
            })
            .sum()
    }

    /// Bundles each user interacted with, sorted ascending.
    pub fn user_bundles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.space.num_users];
        for (u, b) in self.edges(RelationKind::UserBundle).iter() {
            out[u].push(b);
        }
        out
    }

    /// Applies a counterfactual delta, returning a new graph.
    ///
    /// Every added pair must be absent and every dropped pair present; a
    /// violation means the delta was not generated against this graph.
    pub fn apply_delta(&self, delta: &ViewDelta) -> Result<TripartiteGraph> {
        let mut sets = Vec::with_capacity(3);
        for kind in RelationKind::ALL {
            let current = self.edges(kind);
            let src_limit = self.space.count(kind.src_type());
            let dst_limit = self.space.count(kind.dst_type());
            for &(src, dst) in delta.added(kind) {
                if src >= src_limit || dst >= dst_limit {
                    return Err(Error::EdgeOutOfBounds {
                        relation: kind,
                        src,
                        dst,
                        src_limit,
                        dst_limit,
                    });
                }
                if current.contains((src, dst)) {
                    return Err(Error::DeltaConflict {
                        relation: kind,
                        src,
                        dst,
                        reason: "added pair is already an edge",
                    });
                }
            }
            for &(src, dst) in delta.dropped(kind) {
                if !current.contains((src, dst)) {
                    return Err(Error::DeltaConflict {
                        relation: kind,
                        src,
                        dst,
                        reason: "dropped pair is not an edge",
                    });
                }
            }
            let dropped = delta.dropped(kind);
            let kept = current.iter().filter(|p| dropped.binary_search(p).is_err());
            let merged: Vec<Pair> = kept.chain(delta.added(kind).iter().copied()).collect();
            sets.push(EdgeSet::from_unsorted(kind, merged));
        }
        let edges: [EdgeSet; 3] = sets.try_into().expect("three relations");
        Ok(Self::from_sets(self.space, edges))
    }
}

/// Symmetric-normalized adjacency over global node indices, in CSR layout.
///
/// The weight of edge `(i, j)` is `1 / sqrt(d_i * d_j)` where `d` is the
/// total degree across all three relations. Isolated nodes have empty rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    space: NodeSpace,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl PropagationMatrix {
    pub fn space(&self) -> NodeSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.row_ptr[i] == self.row_ptr[i + 1]
    }

    /// Entry `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }
}

pub fn normalized_adjacency(graph: &TripartiteGraph) -> PropagationMatrix {
    let space = graph.space();
    let n = space.total();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for kind in RelationKind::ALL {
        let src_off = space.offset(kind.src_type());
        let dst_off = space.offset(kind.dst_type());
        for (s, d) in graph.edges(kind).iter() {
            adjacency[src_off + s].push(dst_off + d);
            adjacency[dst_off + d].push(src_off + s);
        }
    }
    let degree: Vec<f64> = adjacency.iter().map(|a| a.len() as f64).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (i, neighbours) in adjacency.iter_mut().enumerate() {
        neighbours.sort_unstable();
        for &j in neighbours.iter() {
            cols.push(j);
            vals.push(1.0 / (degree[i] * degree[j]).sqrt());
        }
        row_ptr.push(cols.len());
    }
    PropagationMatrix {
        space,
        row_ptr,
        cols,
        vals,
    }
}
