//! Counterfactual view generation by edge addition and dropping.
//!
//! Two samplers are provided. The stochastic sampler adds uniformly random
//! non-edges and drops uniformly random edges. The heuristic sampler scores
//! random batches of candidate pairs with a pretrained selection model and,
//! per batch, adds non-edges scoring above `kappa+ = alpha+ * max` and drops
//! edges scoring at or below `kappa- = alpha- * min`.
//!
//! Both samplers refuse to drop an edge that is the last one of either
//! endpoint within its relation.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{predict_score, PropagatedEmbeddings};
use crate::error::{Error, Result};
use crate::graph::{Pair, RelationKind, TripartiteGraph};
use crate::seed::{derive_seed, Rng as SeededRng};
use rand::SeedableRng;

pub use crate::graph::ViewDelta;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Stochastic,
    Heuristic,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Stochastic => "stochastic",
            SamplerKind::Heuristic => "heuristic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub ratio_ub: f64,
    pub ratio_ui: f64,
    pub ratio_bi: f64,
    /// Share of each relation's perturbations that are additions.
    pub alpha: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub num_views: usize,
    /// Candidate pairs scored per heuristic batch.
    pub batch_size: usize,
    /// Heuristic batches per relation before giving up.
    pub max_batches: usize,
    pub sampler: SamplerKind,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            ratio_ub: 0.1,
            ratio_ui: 0.1,
            ratio_bi: 0.1,
            alpha: 0.5,
            alpha_plus: 0.8,
            alpha_minus: 1.2,
            num_views: 4,
            batch_size: 64,
            max_batches: 10_000,
            sampler: SamplerKind::Heuristic,
        }
    }
}

impl AugmentConfig {
    pub fn ratio(&self, kind: RelationKind) -> f64 {
        match kind {
            RelationKind::UserBundle => self.ratio_ub,
            RelationKind::UserItem => self.ratio_ui,
            RelationKind::BundleItem => self.ratio_bi,
        }
    }

    pub fn with_ratios(mut self, ub: f64, ui: f64, bi: f64) -> Self {
        self.ratio_ub = ub;
        self.ratio_ui = ui;
        self.ratio_bi = bi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for kind in RelationKind::ALL {
            let r = self.ratio(kind);
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(
                    format!("augment.ratio_{}", kind.tag()),
                    format!("{r} is outside [0, 1)"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("augment.alpha", "must lie in [0, 1]"));
        }
        if !(self.alpha_plus > 0.0 && self.alpha_plus.is_finite()) {
            return Err(Error::config("augment.alpha_plus", "must be > 0"));
        }
        if !(self.alpha_minus > 0.0 && self.alpha_minus.is_finite()) {
            return Err(Error::config("augment.alpha_minus", "must be > 0"));
        }
        if self.num_views == 0 {
            return Err(Error::config("augment.num_views", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("augment.batch_size", "must be >= 1"));
        }
        if self.max_batches == 0 {
            return Err(Error::config("augment.max_batches", "must be >= 1"));
        }
        Ok(())
    }
}

/// `ceil(x)`, tolerant of float noise just above an integer.
pub fn quota(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterfactualView {
    pub delta: ViewDelta,
    pub graph: TripartiteGraph,
    pub seed: u64,
}

impl CounterfactualView {
    pub fn from_delta(factual: &TripartiteGraph, delta: ViewDelta, seed: u64) -> Result<Self> {
        let graph = factual.apply_delta(&delta)?;
        Ok(CounterfactualView { delta, graph, seed })
    }

    /// A view identical to the factual graph.
    pub fn identity(factual: &TripartiteGraph) -> Self {
        CounterfactualView {
            delta: ViewDelta::new(),
            graph: factual.clone(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchThresholds {
    pub kappa_plus: f64,
    pub kappa_minus: f64,
}

impl BatchThresholds {
    /// `None` for an empty batch.
    pub fn from_scores(scores: &[f64], alpha_plus: f64, alpha_minus: f64) -> Option<Self> {
        let max = scores.iter().copied().reduce(f64::max)?;
        let min = scores.iter().copied().reduce(f64::min)?;
        Some(BatchThresholds {
            kappa_plus: alpha_plus * max,
            kappa_minus: alpha_minus * min,
        })
    }
}

/// Inner products of the two endpoint embeddings for pairs of one relation.
pub fn relevance_scores(
    kind: RelationKind,
    pairs: &[Pair],
    model: &PropagatedEmbeddings,
) -> Result<Vec<f64>> {
    let space = model.space();
    let (src_ty, dst_ty) = (kind.src_type(), kind.dst_type());
    let (src_n, dst_n) = (space.count(src_ty), space.count(dst_ty));
    pairs
        .iter()
        .map(|&(s, d)| {
            if s >= src_n || d >= dst_n {
                return Err(Error::EdgeOutOfBounds {
                    relation: kind,
                    src: s,
                    dst: d,
                    src_limit: src_n,
                    dst_limit: dst_n,
                });
            }
            Ok(predict_score(model.node(src_ty, s), model.node(dst_ty, d)))
        })
        .collect()
}

/// Pairs picked from one batch, in batch order without repeats.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    pub add: Vec<Pair>,
    pub drop: Vec<Pair>,
}

/// The batch selection rule: add a non-edge scoring strictly above
/// `kappa_plus`; drop an edge scoring at or below `kappa_minus`.
pub fn select_pairs(
    kind: RelationKind,
    pairs: &[Pair],
    scores: &[f64],
    thresholds: BatchThresholds,
    graph: &TripartiteGraph,
) -> Selection {
    let mut seen = HashSet::new();
    let mut out = Selection::default();
    for (&pair, &score) in pairs.iter().zip(scores) {
        if !seen.insert(pair) {
            continue;
        }
        let is_edge = graph.contains(kind, pair);
        if score > thresholds.kappa_plus && !is_edge {
            out.add.push(pair);
        } else if score <= thresholds.kappa_minus && is_edge {
            out.drop.push(pair);
        }
    }
    out
}

/// Degrees of one relation, tracking drops so no endpoint is emptied.
struct DropGuard {
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl DropGuard {
    fn new(graph: &TripartiteGraph, kind: RelationKind) -> Self {
        DropGuard {
            src: graph.src_degrees(kind).to_vec(),
            dst: graph.dst_degrees(kind).to_vec(),
        }
    }

    fn try_drop(&mut self, (s, d): Pair) -> bool {
        if self.src[s] > 1 && self.dst[d] > 1 {
            self.src[s] -= 1;
            self.dst[d] -= 1;
            true
        } else {
            false
        }
    }
}

fn relation_targets(
    cfg: &AugmentConfig,
    kind: RelationKind,
    edges: usize,
) -> (usize, usize, usize) {
    let budget = cfg.ratio(kind) * edges as f64;
    (
        quota(budget),
        quota(cfg.alpha * budget),
        quota((1.0 - cfg.alpha) * budget),
    )
}

fn heuristic_relation(
    factual: &TripartiteGraph,
    model: &PropagatedEmbeddings,
    cfg: &AugmentConfig,
    kind: RelationKind,
    rng: &mut SeededRng,
) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let space = factual.space();
    let (src_n, dst_n) = (space.count(kind.src_type()), space.count(kind.dst_type()));
    let (target, add_cap, drop_cap) = relation_targets(cfg, kind, factual.edges(kind).len());
    let exhaustive = src_n.saturating_mul(dst_n) <= cfg.batch_size;

    let mut adds = Vec::new();
    let mut drops = Vec::new();
    let mut decided: HashSet<Pair> = HashSet::new();
    let mut guard = DropGuard::new(factual, kind);
    let mut batches = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    while adds.len() + drops.len() < target {
        let give_up = batches >= cfg.max_batches || (exhaustive && batches >= 1);
        if give_up {
            return Err(Error::QuotaUnreachable {
                relation: kind,
                target,
                adds: adds.len(),
                drops: drops.len(),
                batches,
            });
        }
        batch.clear();
        if exhaustive {
            batch.extend((0..src_n).flat_map(|s| (0..dst_n).map(move |d| (s, d))));
        } else {
            batch.extend(
                (0..cfg.batch_size)
                    .map(|_| (rng.random_range(0..src_n), rng.random_range(0..dst_n))),
            );
        }
        batches += 1;

        let scores = relevance_scores(kind, &batch, model)?;
        let Some(thresholds) =
            BatchThresholds::from_scores(&scores, cfg.alpha_plus, cfg.alpha_minus)
        else {
            continue;
        };
        // Caps gate whole batches, so one batch can overshoot by at most its
        // size. A category past its cap still takes this batch's pairs when
        // the other category selects nothing from it.
        let allow_add = adds.len() < add_cap;
        let allow_drop = drops.len() < drop_cap;
        let fresh: Vec<(Pair, f64)> = batch
            .iter()
            .zip(&scores)
            .filter(|(p, _)| !decided.contains(p))
            .map(|(&p, &s)| (p, s))
            .collect();
        let (pairs, fresh_scores): (Vec<Pair>, Vec<f64>) = fresh.into_iter().unzip();
        let selection = select_pairs(kind, &pairs, &fresh_scores, thresholds, factual);
        let mut added = 0;
        if allow_add {
            added = selection.add.len();
            for &p in &selection.add {
                decided.insert(p);
                adds.push(p);
            }
        }
        let mut dropped = 0;
        if allow_drop || added == 0 {
            for &p in &selection.drop {
                if guard.try_drop(p) {
                    decided.insert(p);
                    drops.push(p);
                    dropped += 1;
                }
            }
        }
        if !allow_add && dropped == 0 {
            for &p in &selection.add {
                decided.insert(p);
                adds.push(p);
            }
        }
    }
    Ok((adds, drops))
}

/// Builds one view with the score-guided sampler.
pub fn heuristic_generate(
    factual: &TripartiteGraph,
    selection_model: &PropagatedEmbeddings,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<CounterfactualView> {
    cfg.validate()?;
    if selection_model.space() != factual.space() {
        return Err(Error::DimensionMismatch {
            what: "selection model node count",
            expected: factual.space().total(),
            found: selection_model.space().total(),
        });
    }
    let mut delta = ViewDelta::new();
    for kind in RelationKind::ALL {
        let mut rng = SeededRng::seed_from_u64(derive_seed(seed, kind.tag()));
        let (add, drop) = heuristic_relation(factual, selection_model, cfg, kind, &mut rng)?;
        delta.set(kind, add, drop);
    }
    CounterfactualView::from_delta(factual, delta, seed)
}

fn stochastic_relation(
    factual: &TripartiteGraph,
    cfg: &AugmentConfig,
    kind: RelationKind,
    rng: &mut SeededRng,
) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let space = factual.space();
    let edges = factual.edges(kind);
    let (src_n, dst_n) = (space.count(kind.src_type()), space.count(kind.dst_type()));
    let (_, add_quota, drop_quota) = relation_targets(cfg, kind, edges.len());

    let non_edges = src_n * dst_n - edges.len();
    if add_quota > non_edges {
        return Err(Error::QuotaExceedsAvailable {
            relation: kind,
            category: "additions",
            needed: add_quota,
            available: non_edges,
        });
    }
    let adds: Vec<Pair> = if add_quota * 2 > non_edges {
        let mut pool: Vec<Pair> = (0..src_n)
            .flat_map(|s| (0..dst_n).map(move |d| (s, d)))
            .filter(|&p| !edges.contains(p))
            .collect();
        pool.shuffle(rng);
        pool.truncate(add_quota);
        pool
    } else {
        let mut chosen = HashSet::with_capacity(add_quota);
        let mut out = Vec::with_capacity(add_quota);
        while out.len() < add_quota {
            let p = (rng.random_range(0..src_n), rng.random_range(0..dst_n));
            if !edges.contains(p) && chosen.insert(p) {
                out.push(p);
            }
        }
        out
    };

    let mut drops = Vec::with_capacity(drop_quota);
    if drop_quota > 0 {
        let mut order: Vec<Pair> = edges.pairs().to_vec();
        order.shuffle(rng);
        let mut guard = DropGuard::new(factual, kind);
        for p in order {
            if drops.len() == drop_quota {
                break;
            }
            if guard.try_drop(p) {
                drops.push(p);
            }
        }
        if drops.len() < drop_quota {
            return Err(Error::QuotaExceedsAvailable {
                relation: kind,
                category: "droppable edges",
                needed: drop_quota,
                available: drops.len(),
            });
        }
    }
    Ok((adds, drops))
}

/// Builds one view with uniformly random additions and drops.
pub fn stochastic_generate(
    factual: &TripartiteGraph,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<CounterfactualView> {
    cfg.validate()?;
    let mut delta = ViewDelta::new();
    for kind in RelationKind::ALL {
        let mut rng = SeededRng::seed_from_u64(derive_seed(seed, kind.tag()));
        let (add, drop) = stochastic_relation(factual, cfg, kind, &mut rng)?;
        delta.set(kind, add, drop);
    }
    CounterfactualView::from_delta(factual, delta, seed)
}

/// Generates `cfg.num_views` views, view `i` seeded with `derive_seed(seed, "view-i")`.
///
/// The heuristic sampler needs a selection model.
pub fn generate_view_set(
    factual: &TripartiteGraph,
    selection_model: Option<&PropagatedEmbeddings>,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<CounterfactualView>> {
    cfg.validate()?;
    if cfg.sampler == SamplerKind::Heuristic && selection_model.is_none() {
        return Err(Error::config(
            "augment.sampler",
            "heuristic sampling requires a pretrained selection model",
        ));
    }
    (0..cfg.num_views)
        .into_par_iter()
        .map(|i| {
            let view_seed = derive_seed(seed, &format!("view-{i}"));
            match (cfg.sampler, selection_model) {
                (SamplerKind::Heuristic, Some(model)) => {
                    heuristic_generate(factual, model, cfg, view_seed)
                }
                _ => stochastic_generate(factual, cfg, view_seed),
            }
        })
        .collect()
}

/// Writes a delta as `<+|->\t<relation>\t<src>\t<dst>` lines after a
/// commented header.
pub fn write_delta<W: Write>(
    mut w: W,
    delta: &ViewDelta,
    seed: u64,
    cfg: &AugmentConfig,
) -> std::io::Result<()> {
    writeln!(w, "# seed={seed}")?;
    writeln!(
        w,
        "# ratios=ub:{},ui:{},bi:{}",
        cfg.ratio_ub, cfg.ratio_ui, cfg.ratio_bi
    )?;
    writeln!(w, "# sampler={}", cfg.sampler.name())?;
    for kind in RelationKind::ALL {
        for (s, d) in delta.added(kind) {
            writeln!(w, "+\t{kind}\t{s}\t{d}")?;
        }
        for (s, d) in delta.dropped(kind) {
            writeln!(w, "-\t{kind}\t{s}\t{d}")?;
        }
    }
    Ok(())
}

/// Parses a delta file; returns the delta and the seed recorded in the header
/// (0 when absent).
pub fn read_delta<R: BufRead>(r: R, path: &std::path::Path) -> Result<(ViewDelta, u64)> {
    let mut add: [Vec<Pair>; 3] = Default::default();
    let mut drop: [Vec<Pair>; 3] = Default::default();
    let mut seed = 0;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("seed=") {
                seed = v
                    .parse()
                    .map_err(|_| parse_err(n + 1, format!("bad seed `{v}`")))?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                n + 1,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let kind: RelationKind = fields[1].parse().map_err(|e| parse_err(n + 1, e))?;
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(n + 1, format!("bad id `{s}`")))
        };
        let pair = (id(fields[2])?, id(fields[3])?);
        match fields[0] {
            "+" => add[kind.index()].push(pair),
            "-" => drop[kind.index()].push(pair),
            other => return Err(parse_err(n + 1, format!("bad op `{other}`"))),
        }
    }
    let mut delta = ViewDelta::new();
    for kind in RelationKind::ALL {
        delta.set(
            kind,
            std::mem::take(&mut add[kind.index()]),
            std::mem::take(&mut drop[kind.index()]),
        );
    }
    Ok((delta, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodeSpace};
    use crate::linalg::Matrix;

    fn graph() -> TripartiteGraph {
        let space = NodeSpace::new(4, 5, 3).unwrap();
        let ub: Vec<Pair> = (0..4)
            .flat_map(|u| [(u, u % 3), (u, (u + 1) % 3)])
            .collect();
        let ui: Vec<Pair> = (0..4).flat_map(|u| [(u, u), (u, (u + 2) % 5)]).collect();
        let bi: Vec<Pair> = (0..3).flat_map(|b| [(b, b), (b, b + 1), (b, 4)]).collect();
        build_graph(space, &ub, &ui, &bi).unwrap()
    }

    #[test]
    fn relevance_inner_products() {
        let space = NodeSpace::new(1, 1, 1).unwrap();
        let m = |u: [f64; 2], b: [f64; 2]| {
            PropagatedEmbeddings::from_matrix(
                space,
                0,
                Matrix::from_rows(&[u.to_vec(), vec![0.0, 0.0], b.to_vec()]).unwrap(),
            )
            .unwrap()
        };
        let ub = RelationKind::UserBundle;
        assert_eq!(
            relevance_scores(ub, &[(0, 0)], &m([1.0, 0.0], [1.0, 0.0])).unwrap(),
            [1.0]
        );
        assert_eq!(
            relevance_scores(ub, &[(0, 0)], &m([1.0, 0.0], [0.0, 1.0])).unwrap(),
            [0.0]
        );
        assert_eq!(
            relevance_scores(ub, &[(0, 0)], &m([0.5, 0.5], [2.0, -1.0])).unwrap(),
            [0.5]
        );
        assert!(relevance_scores(ub, &[(0, 3)], &m([0.5, 0.5], [2.0, -1.0])).is_err());
    }

    #[test]
    fn thresholds_from_batch() {
        let t = BatchThresholds::from_scores(&[0.9, 0.5, 0.1], 0.8, 1.2).unwrap();
        assert!((t.kappa_plus - 0.72).abs() < 1e-12);
        assert!((t.kappa_minus - 0.12).abs() < 1e-12);
        assert!(BatchThresholds::from_scores(&[], 0.8, 1.2).is_none());
    }

    #[test]
    fn selection_rule_by_hand() {
        let space = NodeSpace::new(3, 1, 3).unwrap();
        // (2,2) is an edge; (0,0) is not; (1,1) is an edge
        let g = build_graph(space, &[(2, 2), (1, 1)], &[], &[]).unwrap();
        let ub = RelationKind::UserBundle;
        let pairs = [(0, 0), (1, 1), (2, 2)];
        let scores = [0.9, 0.5, 0.1];
        let t = BatchThresholds::from_scores(&scores, 0.8, 1.2).unwrap();
        let s = select_pairs(ub, &pairs, &scores, t, &g);
        assert_eq!(s.add, vec![(0, 0)]);
        assert_eq!(s.drop, vec![(2, 2)]);

        // score equal to kappa+ is not added; high-scoring edges are not added
        let t = BatchThresholds {
            kappa_plus: 0.9,
            kappa_minus: -1.0,
        };
        assert!(select_pairs(ub, &pairs, &scores, t, &g).add.is_empty());
        let t = BatchThresholds {
            kappa_plus: 0.0,
            kappa_minus: -1.0,
        };
        let s = select_pairs(ub, &[(2, 2), (1, 1)], &[0.9, 0.8], t, &g);
        assert!(s.add.is_empty() && s.drop.is_empty());
    }

    #[test]
    fn zero_ratio_is_identity() {
        let g = graph();
        let cfg = AugmentConfig::default().with_ratios(0.0, 0.0, 0.0);
        let model =
            PropagatedEmbeddings::from_matrix(g.space(), 0, Matrix::zeros(g.space().total(), 2))
                .unwrap();
        let v = heuristic_generate(&g, &model, &cfg, 3).unwrap();
        assert!(v.delta.is_empty());
        assert_eq!(v.graph, g);
        let v = stochastic_generate(&g, &cfg, 3).unwrap();
        assert_eq!(v.graph, g);
    }

    #[test]
    fn stochastic_quota_and_split() {
        let space = NodeSpace::new(20, 2, 20).unwrap();
        let ub: Vec<Pair> = (0..20)
            .flat_map(|u| (0..5).map(move |k| (u, (u + k) % 20)))
            .collect();
        let g = build_graph(space, &ub, &[], &[]).unwrap();
        assert_eq!(g.edges(RelationKind::UserBundle).len(), 100);
        let cfg = AugmentConfig {
            alpha: 0.5,
            sampler: SamplerKind::Stochastic,
            ..AugmentConfig::default()
        }
        .with_ratios(0.2, 0.0, 0.0);
        let v = stochastic_generate(&g, &cfg, 11).unwrap();
        assert!(v.delta.added(RelationKind::UserBundle).len() >= 10);
        assert!(v.delta.dropped(RelationKind::UserBundle).len() >= 10);

        let only_add = AugmentConfig {
            alpha: 1.0,
            ..cfg.clone()
        };
        let v = stochastic_generate(&g, &only_add, 11).unwrap();
        assert!(v.delta.dropped(RelationKind::UserBundle).is_empty());
        assert!(v.delta.added(RelationKind::UserBundle).len() >= 20);

        assert_eq!(
            stochastic_generate(&g, &cfg, 5).unwrap(),
            stochastic_generate(&g, &cfg, 5).unwrap()
        );
    }

    #[test]
    fn stochastic_respects_last_edge() {
        // every user has exactly one bundle: nothing may be dropped
        let space = NodeSpace::new(5, 1, 5).unwrap();
        let ub: Vec<Pair> = (0..5).map(|u| (u, u)).collect();
        let g = build_graph(space, &ub, &[], &[]).unwrap();
        let cfg = AugmentConfig {
            alpha: 0.0,
            ..AugmentConfig::default()
        }
        .with_ratios(0.5, 0.0, 0.0);
        assert!(matches!(
            stochastic_generate(&g, &cfg, 1),
            Err(Error::QuotaExceedsAvailable { .. })
        ));
    }

    #[test]
    fn heuristic_reports_unreachable_quota() {
        // all-zero scores: kappa+ = 0 so nothing is added, and only edges with
        // a second neighbour may drop
        let g = graph();
        let model =
            PropagatedEmbeddings::from_matrix(g.space(), 0, Matrix::zeros(g.space().total(), 2))
                .unwrap();
        let cfg = AugmentConfig {
            max_batches: 5,
            ..AugmentConfig::default()
        }
        .with_ratios(0.9, 0.0, 0.0);
        match heuristic_generate(&g, &model, &cfg, 1) {
            Err(Error::QuotaUnreachable { relation, .. }) => {
                assert_eq!(relation, RelationKind::UserBundle)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn view_set_requires_model_for_heuristic() {
        let g = graph();
        assert!(generate_view_set(&g, None, &AugmentConfig::default(), 1).is_err());
        let cfg = AugmentConfig {
            sampler: SamplerKind::Stochastic,
            num_views: 1,
            ..Default::default()
        };
        assert_eq!(generate_view_set(&g, None, &cfg, 1).unwrap().len(), 1);
    }

    #[test]
    fn config_validation_names_key() {
        let cfg = AugmentConfig::default().with_ratios(1.5, 0.1, 0.1);
        match cfg.validate() {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "augment.ratio_ub"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn delta_file_round_trip() {
        let mut d = ViewDelta::new();
        d.set(RelationKind::UserItem, vec![(1, 2), (0, 3)], vec![(4, 4)]);
        d.set(RelationKind::BundleItem, vec![], vec![(0, 0)]);
        let mut buf = Vec::new();
        write_delta(&mut buf, &d, 99, &AugmentConfig::default()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("+\tui\t0\t3\n"));
        assert!(text.starts_with("# seed=99\n"));
        let (back, seed) = read_delta(&buf[..], std::path::Path::new("mem")).unwrap();
        assert_eq!((back, seed), (d, 99));
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(quota(0.1 * 100.0), 10);
        assert_eq!(quota(0.2 * 0.5 * 100.0), 10);
        assert_eq!(quota(5137.7), 5138);
        assert_eq!(quota(0.0), 0);
    }
}
