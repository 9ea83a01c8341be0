//! Train/validation/test splitting and top-k ranking metrics.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{predict_score, PropagatedEmbeddings};
use crate::error::{Error, Result};
use crate::graph::{RelationKind, TripartiteGraph};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("split.train", self.train),
            ("split.validation", self.validation),
            ("split.test", self.test),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        if (self.train + self.validation + self.test - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", "fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Held-out bundles per user, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeldOut {
    pub per_user: Vec<Vec<usize>>,
}

impl HeldOut {
    pub fn num_pairs(&self) -> usize {
        self.per_user.iter().map(Vec::len).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_user
            .iter()
            .enumerate()
            .flat_map(|(u, bs)| bs.iter().map(move |&b| (u, b)))
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: TripartiteGraph,
    pub validation: HeldOut,
    pub test: HeldOut,
}

/// Per-user random partition of user-bundle edges.
///
/// A user with `n >= 3` interactions sends `round(test * n)` to test and
/// `round(validation * n)` to validation; the rest stays in train. Users with
/// fewer than three interactions keep everything in train. User-item and
/// bundle-item edges always stay in train.
pub fn split(graph: &TripartiteGraph, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if graph.edges(RelationKind::UserBundle).is_empty() {
        return Err(Error::EmptyInput("user-bundle interactions"));
    }
    let mut rng = rng_for(spec.seed, "split");
    let space = graph.space();
    let mut train_ub = Vec::new();
    let mut validation = vec![Vec::new(); space.num_users];
    let mut test = vec![Vec::new(); space.num_users];
    for (user, mut bundles) in graph.user_bundles().into_iter().enumerate() {
        let n = bundles.len();
        if n < 3 {
            train_ub.extend(bundles.iter().map(|&b| (user, b)));
            continue;
        }
        bundles.shuffle(&mut rng);
        let mut n_test = (spec.test * n as f64).round() as usize;
        let mut n_val = (spec.validation * n as f64).round() as usize;
        while n_test + n_val >= n {
            if n_val > 0 {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        let mut t: Vec<usize> = bundles[..n_test].to_vec();
        let mut v: Vec<usize> = bundles[n_test..n_test + n_val].to_vec();
        t.sort_unstable();
        v.sort_unstable();
        test[user] = t;
        validation[user] = v;
        train_ub.extend(bundles[n_test + n_val..].iter().map(|&b| (user, b)));
    }
    let train = TripartiteGraph::new(
        space,
        [
            train_ub,
            graph.edges(RelationKind::UserItem).pairs().to_vec(),
            graph.edges(RelationKind::BundleItem).pairs().to_vec(),
        ],
    )?;
    Ok(Split {
        train,
        validation: HeldOut {
            per_user: validation,
        },
        test: HeldOut { per_user: test },
    })
}

/// All bundles except `exclude`, by descending score; ties go to the lower id.
pub fn rank_bundles(
    embeddings: &PropagatedEmbeddings,
    user: usize,
    exclude: &[usize],
) -> Result<Vec<usize>> {
    let space = embeddings.space();
    if user >= space.num_users {
        return Err(Error::UnknownNode {
            kind: "user",
            id: user,
            count: space.num_users,
        });
    }
    let excluded: HashSet<usize> = exclude.iter().copied().collect();
    let u = embeddings.user(user);
    let mut scored: Vec<(f64, usize)> = (0..space.num_bundles)
        .filter(|b| !excluded.contains(b))
        .map(|b| (predict_score(u, embeddings.bundle(b)), b))
        .collect();
    // partial_cmp, not total_cmp: -0.0 and 0.0 must tie
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    Ok(scored.into_iter().map(|(_, b)| b).collect())
}

/// `None` when `relevant` is empty (the user is skipped).
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|b| relevant.contains(b))
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with `1 / log2(rank + 1)` discount; `None` when
/// `relevant` is empty.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, b)| relevant.contains(b))
        .map(|(i, _)| 1.0 / (i as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|i| 1.0 / (i as f64 + 2.0).log2())
        .sum();
    Some(dcg / idcg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// (user, recall, ndcg) for every evaluated user, ascending by user.
    pub per_user: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cutoffs: Vec<CutoffMetrics>,
    pub n_users: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }

    /// `metric,k,value,n_users,seed` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,k,value,n_users,seed")?;
        for c in &self.cutoffs {
            writeln!(
                w,
                "recall,{},{},{},{}",
                c.k, c.recall, self.n_users, self.seed
            )?;
            writeln!(w, "ndcg,{},{},{},{}", c.k, c.ndcg, self.n_users, self.seed)?;
        }
        Ok(())
    }
}

/// Ranks every user with a nonempty test set (excluding the user's training
/// bundles) and averages recall and NDCG at each cutoff.
pub fn evaluate(
    embeddings: &PropagatedEmbeddings,
    train: &TripartiteGraph,
    test: &HeldOut,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::config("eval.ks", "cutoffs must be >= 1"));
    }
    let train_bundles = train.user_bundles();
    let max_k = *ks.iter().max().expect("nonempty");
    let rows: Vec<(usize, Vec<(f64, f64)>)> = test
        .per_user
        .par_iter()
        .enumerate()
        .filter(|(_, rel)| !rel.is_empty())
        .map(|(user, rel)| {
            let ranked = rank_bundles(embeddings, user, &train_bundles[user])?;
            let top = &ranked[..ranked.len().min(max_k)];
            let relevant: HashSet<usize> = rel.iter().copied().collect();
            let values = ks
                .iter()
                .map(|&k| {
                    (
                        recall_at_k(top, &relevant, k).expect("nonempty"),
                        ndcg_at_k(top, &relevant, k).expect("nonempty"),
                    )
                })
                .collect();
            Ok((user, values))
        })
        .collect::<Result<_>>()?;

    let n = rows.len();
    let cutoffs = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let per_user: Vec<(usize, f64, f64)> = rows
                .iter()
                .map(|(u, vals)| (*u, vals[ki].0, vals[ki].1))
                .collect();
            let mean = |f: fn(&(usize, f64, f64)) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    per_user.iter().map(f).sum::<f64>() / n as f64
                }
            };
            CutoffMetrics {
                k,
                recall: mean(|r| r.1),
                ndcg: mean(|r| r.2),
                per_user,
            }
        })
        .collect();
    Ok(MetricsReport {
        cutoffs,
        n_users: n,
        seed,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodeSpace};
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn set(xs: &[usize]) -> HashSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn recall_cases() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(recall_at_k(&ranked, &set(&[0, 5]), 20), Some(1.0));
        assert_eq!(recall_at_k(&ranked, &set(&[25, 29]), 20), Some(0.0));
        assert_eq!(recall_at_k(&ranked, &set(&[3, 25]), 20), Some(0.5));
        assert_eq!(recall_at_k(&ranked, &set(&[]), 20), None);
    }

    #[test]
    fn ndcg_cases() {
        let ranked = [7, 3, 9];
        assert_eq!(ndcg_at_k(&ranked, &set(&[7]), 20), Some(1.0));
        let r2 = ndcg_at_k(&ranked, &set(&[3]), 20).unwrap();
        assert!((r2 - 0.630929753571).abs() < 1e-9);
        assert_eq!(ndcg_at_k(&ranked, &set(&[9]), 2), Some(0.0));
        assert_eq!(ndcg_at_k(&ranked, &set(&[]), 2), None);
    }

    fn scores_model(scores: &[f64]) -> PropagatedEmbeddings {
        // one user with embedding [1]; bundle b has embedding [scores[b]]
        let space = NodeSpace::new(1, 1, scores.len()).unwrap();
        let mut rows = vec![vec![1.0], vec![0.0]];
        rows.extend(scores.iter().map(|&s| vec![s]));
        PropagatedEmbeddings::from_matrix(space, 0, Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn ranking_order_and_ties() {
        let m = scores_model(&[0.1, 0.9, 0.5]);
        assert_eq!(rank_bundles(&m, 0, &[]).unwrap(), [1, 2, 0]);
        let m = scores_model(&[0.2, 0.2, 0.2, 0.2]);
        assert_eq!(rank_bundles(&m, 0, &[]).unwrap(), [0, 1, 2, 3]);
        assert_eq!(rank_bundles(&m, 0, &[0, 1, 3]).unwrap(), [2]);
        assert!(rank_bundles(&m, 1, &[]).is_err());
    }

    #[test]
    fn split_counts() {
        let space = NodeSpace::new(2, 1, 12).unwrap();
        let mut ub: Vec<(usize, usize)> = (0..10).map(|b| (0, b)).collect();
        ub.push((1, 11));
        let g = build_graph(space, &ub, &[(0, 0)], &[(3, 0)]).unwrap();
        let s = split(&g, &SplitSpec::default()).unwrap();
        assert_eq!(s.test.per_user[0].len(), 2);
        assert_eq!(s.validation.per_user[0].len(), 1);
        assert_eq!(s.train.src_degree(RelationKind::UserBundle, 0), 7);
        assert!(s.test.per_user[1].is_empty());
        assert_eq!(s.train.src_degree(RelationKind::UserBundle, 1), 1);
        assert_eq!(s.train.edges(RelationKind::UserItem).len(), 1);
        assert_eq!(s.train.edges(RelationKind::BundleItem).len(), 1);

        let again = split(&g, &SplitSpec::default()).unwrap();
        assert_eq!(again.test, s.test);
        assert_eq!(again.train, s.train);
    }

    #[test]
    fn split_rejects_empty_ub() {
        let space = NodeSpace::new(2, 1, 2).unwrap();
        let g = build_graph(space, &[], &[], &[]).unwrap();
        assert!(split(&g, &SplitSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_bounded_and_ndcg_is_one_only_for_top_hits(
            perm in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(),
            relevant in proptest::collection::hash_set(0..30usize, 1..8),
            k in 1usize..35,
        ) {
            let r = recall_at_k(&perm, &relevant, k).unwrap();
            let n = ndcg_at_k(&perm, &relevant, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
            let top = k.min(relevant.len());
            let ideal = perm[..top].iter().all(|b| relevant.contains(b));
            prop_assert_eq!(ideal, (n - 1.0).abs() < 1e-12, "ndcg {}", n);
        }
    }

    #[test]
    fn oracle_model_scores_perfectly() {
        // user 0 truly likes bundles 2 and 3 most
        let m = scores_model(&[0.1, 0.2, 0.9, 0.8, 0.0]);
        let space = m.space();
        let train = build_graph(space, &[], &[], &[]).unwrap();
        let test = HeldOut {
            per_user: vec![vec![2, 3]],
        };
        let r = evaluate(&m, &train, &test, &[20, 40], 5).unwrap();
        for c in &r.cutoffs {
            assert_eq!((c.recall, c.ndcg), (1.0, 1.0));
        }
        assert_eq!(r.n_users, 1);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "metric,k,value,n_users,seed\nrecall,20,1,1,5\nndcg,20,1,1,5\nrecall,40,1,1,5\nndcg,40,1,1,5\n"
        );
    }
}
