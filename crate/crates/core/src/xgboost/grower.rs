//! Level-wise tree growth driven by aggregated gradient statistics.
//!
//! The grower never touches rows. At each level it asks a
//! [`LevelStatsSource`] for one flat vector holding, for every open node,
//! `[W, H]` followed by `[W_L, H_L]` for every candidate of every sampled
//! feature. A centralized source sums pooled rows; the federated source
//! obtains the same vector through secure aggregation.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::RngCore;

use super::loss::GradientPair;
use super::split::{best_split, leaf_weight, FeatureCandidates, NodeStats, SplitRule};
use super::tree::{CartTree, Features};
use crate::error::{Error, Result};

/// What one level aggregation covers.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPlan {
    pub depth: usize,
    pub nodes: Vec<usize>,
    pub candidates: Vec<FeatureCandidates>,
}

impl LevelPlan {
    pub fn per_node_len(&self) -> usize {
        2 + 2 * self.candidates.iter().map(|c| c.thresholds.len()).sum::<usize>()
    }

    pub fn vector_len(&self) -> usize {
        self.nodes.len() * self.per_node_len()
    }
}

pub trait LevelStatsSource {
    fn level_stats(&mut self, tree: &CartTree, plan: &LevelPlan) -> Result<Vec<f64>>;
}

/// The level vector contributed by one holder of `rows`.
pub fn local_level_stats<R: Features>(
    rows: &[R],
    grads: &[GradientPair],
    tree: &CartTree,
    plan: &LevelPlan,
) -> Vec<f64> {
    let stride = plan.per_node_len();
    let mut out = vec![0.0; plan.vector_len()];
    let slot: BTreeMap<usize, usize> = plan.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    for (row, g) in rows.iter().zip(grads) {
        let Some(&k) = slot.get(&tree.route(row)) else { continue };
        let base = k * stride;
        out[base] += g.w;
        out[base + 1] += g.h;
        let mut offset = base + 2;
        for fc in &plan.candidates {
            let v = row.value(fc.feature);
            // thresholds ascending: the row goes left of every threshold above v
            let first = if v.is_nan() { 0 } else { fc.thresholds.partition_point(|&t| t <= v) };
            for r in first..fc.thresholds.len() {
                out[offset + 2 * r] += g.w;
                out[offset + 2 * r + 1] += g.h;
            }
            offset += 2 * fc.thresholds.len();
        }
    }
    out
}

/// Sums pooled rows; the no-crypto reference source.
pub struct PooledStats<'a, R> {
    pub rows: &'a [R],
    pub grads: &'a [GradientPair],
}

impl<R: Features> LevelStatsSource for PooledStats<'_, R> {
    fn level_stats(&mut self, tree: &CartTree, plan: &LevelPlan) -> Result<Vec<f64>> {
        Ok(local_level_stats(self.rows, self.grads, tree, plan))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowConfig {
    pub max_depth: usize,
    pub rule: SplitRule,
    /// Fraction of usable features drawn for each level.
    pub feature_subsample: f64,
}

#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub plan: LevelPlan,
    pub stats: Vec<f64>,
}

#[derive(Debug)]
pub struct GrownTree {
    pub tree: CartTree,
    pub levels: Vec<LevelRecord>,
    /// Set when an aggregation aborted; the tree was closed at the last
    /// finished depth.
    pub aborted: Option<Error>,
}

/// Per-level feature subsample `Q'`, sorted by feature index.
pub fn sample_features(
    candidates: &[FeatureCandidates],
    ratio: f64,
    rng: &mut impl RngCore,
) -> Vec<FeatureCandidates> {
    if ratio >= 1.0 || candidates.is_empty() {
        return candidates.to_vec();
    }
    if ratio <= 0.0 {
        return Vec::new();
    }
    let k = ((candidates.len() as f64 * ratio).ceil() as usize).clamp(1, candidates.len());
    let mut picked = sample(rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| candidates[i].clone()).collect()
}

pub fn grow_tree(
    source: &mut dyn LevelStatsSource,
    candidates: &[FeatureCandidates],
    cfg: &GrowConfig,
    rng: &mut impl RngCore,
) -> Result<GrownTree> {
    let rule = cfg.rule;
    let mut tree = CartTree::new(cfg.max_depth, rule.lambda, rule.gamma);
    let mut known: BTreeMap<usize, NodeStats> = BTreeMap::new();
    let mut levels = Vec::new();
    let mut aborted = None;

    for depth in 0..=cfg.max_depth {
        let open = tree.pending();
        if open.is_empty() {
            break;
        }
        let last = depth == cfg.max_depth;
        if last && open.iter().all(|n| known.contains_key(n)) {
            break;
        }
        let sampled = if last { Vec::new() } else { sample_features(candidates, cfg.feature_subsample, rng) };
        let plan = LevelPlan { depth, nodes: open, candidates: sampled };
        let stats = match source.level_stats(&tree, &plan) {
            Ok(s) => s,
            Err(e @ Error::RoundAbort { .. }) => {
                aborted = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        if stats.len() != plan.vector_len() {
            return Err(Error::ProtocolIncomplete(format!(
                "level vector has {} entries, expected {}",
                stats.len(),
                plan.vector_len()
            )));
        }
        let stride = plan.per_node_len();
        for (k, &node) in plan.nodes.iter().enumerate() {
            let block = &stats[k * stride..(k + 1) * stride];
            let total = NodeStats { w: block[0], h: block[1] };
            known.insert(node, total);
            if last {
                continue;
            }
            let mut pairs = Vec::new();
            let mut offset = 2;
            for fc in &plan.candidates {
                for c in fc.candidates() {
                    pairs.push((c, NodeStats { w: block[offset], h: block[offset + 1] }));
                    offset += 2;
                }
            }
            if let Some(chosen) = best_split(total, pairs, &rule) {
                let (l, r) = tree.split(node, chosen.split);
                known.insert(l, chosen.left);
                known.insert(r, chosen.right);
            } else {
                tree.set_leaf(node, leaf_weight(total.w, total.h, rule.lambda));
            }
        }
        levels.push(LevelRecord { plan, stats });
    }

    for node in tree.pending() {
        let weight = known.get(&node).map_or(0.0, |s| leaf_weight(s.w, s.h, rule.lambda));
        tree.set_leaf(node, weight);
    }
    Ok(GrownTree { tree, levels, aborted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::xgboost::split::{enumerate_candidates, split_score};
    use crate::xgboost::tree::{CartNode, SplitCandidate};

    fn rule() -> SplitRule {
        SplitRule { lambda: 1.0, gamma: 0.0, min_child_hessian: 0.0 }
    }

    #[test]
    fn local_stats_layout() {
        let rows = vec![vec![0.0], vec![3.0], vec![f64::NAN], vec![9.0]];
        let grads: Vec<_> = (1..=4).map(|i| GradientPair { w: i as f64, h: 1.0 }).collect();
        let tree = CartTree::new(1, 1.0, 0.0);
        let (cands, _) = enumerate_candidates(&[(0.0, 10.0)], 4);
        let plan = LevelPlan { depth: 0, nodes: vec![0], candidates: cands };
        let v = local_level_stats(&rows, &grads, &tree, &plan);
        // thresholds 2,4,6,8: left sets {0,nan}, {0,3,nan}, {0,3,nan}, {0,3,nan}
        assert_eq!(v, vec![10.0, 4.0, 4.0, 2.0, 6.0, 3.0, 6.0, 3.0, 6.0, 3.0]);
    }

    /// Exhaustive oracle: the root split equals the arg-max over every
    /// (feature, threshold) pair computed directly from row partitions.
    #[test]
    fn root_split_matches_brute_force() {
        use rand::Rng;
        let mut rng = seeded_rng(11);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let grads: Vec<GradientPair> =
            rows.iter().map(|r| GradientPair { w: r[1] - 0.5 + 0.1 * r[0], h: 0.25 }).collect();
        let domains = vec![(0.0, 1.0); 3];
        let (cands, _) = enumerate_candidates(&domains, 7);
        let cfg = GrowConfig { max_depth: 1, rule: rule(), feature_subsample: 1.0 };
        let mut src = PooledStats { rows: &rows, grads: &grads };
        let grown = grow_tree(&mut src, &cands, &cfg, &mut seeded_rng(0)).unwrap();

        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..3 {
            for k in 1..=7 {
                let t = k as f64 / 8.0;
                let (mut wl, mut hl, mut wr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for (r, g) in rows.iter().zip(&grads) {
                    if r[f] < t {
                        wl += g.w;
                        hl += g.h;
                    } else {
                        wr += g.w;
                        hr += g.h;
                    }
                }
                let s = split_score(wl, hl, wr, hr, 1.0);
                if best.is_none_or(|b| s > b.0 + 1e-12) {
                    best = Some((s, f, t));
                }
            }
        }
        let (_, f, t) = best.unwrap();
        match &grown.tree.nodes[0] {
            CartNode::Split { split, .. } => {
                assert_eq!(*split, SplitCandidate { feature: f, threshold: t })
            }
            other => panic!("root not split: {other:?}"),
        }
    }

    #[test]
    fn no_candidates_gives_leaf() {
        let rows = vec![vec![1.0], vec![1.0]];
        let grads = vec![GradientPair { w: 1.0, h: 0.5 }; 2];
        let cfg = GrowConfig { max_depth: 3, rule: rule(), feature_subsample: 1.0 };
        let mut src = PooledStats { rows: &rows, grads: &grads };
        let grown = grow_tree(&mut src, &[], &cfg, &mut seeded_rng(0)).unwrap();
        assert_eq!(grown.tree.nodes, vec![CartNode::Leaf { weight: -1.0 }]);
    }

    #[test]
    fn abort_closes_tree_at_finished_depth() {
        struct FailSecond<'a>(PooledStats<'a, Vec<f64>>, usize);
        impl LevelStatsSource for FailSecond<'_> {
            fn level_stats(&mut self, tree: &CartTree, plan: &LevelPlan) -> Result<Vec<f64>> {
                self.1 += 1;
                if self.1 > 1 {
                    return Err(Error::RoundAbort { active: 1, threshold: 2 });
                }
                self.0.level_stats(tree, plan)
            }
        }
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let grads: Vec<_> = (0..10).map(|i| GradientPair { w: i as f64 - 4.5, h: 1.0 }).collect();
        let (cands, _) = enumerate_candidates(&[(0.0, 9.0)], 8);
        let cfg = GrowConfig { max_depth: 3, rule: rule(), feature_subsample: 1.0 };
        let mut src = FailSecond(PooledStats { rows: &rows, grads: &grads }, 0);
        let grown = grow_tree(&mut src, &cands, &cfg, &mut seeded_rng(0)).unwrap();
        assert!(grown.aborted.is_some());
        assert_eq!(grown.tree.depth(), 1);
        assert_eq!(grown.tree.leaf_count(), 2);
        assert!(grown.tree.pending().is_empty());
    }

    #[test]
    fn subsample_is_sorted_subset() {
        let (cands, _) = enumerate_candidates(&vec![(0.0, 1.0); 20], 1);
        let picked = sample_features(&cands, 0.3, &mut seeded_rng(5));
        assert_eq!(picked.len(), 6);
        assert!(picked.windows(2).all(|w| w[0].feature < w[1].feature));
    }
}
