//! Split gain, leaf weights and candidate thresholds.

use std::cmp::Ordering;

use super::tree::SplitCandidate;

/// Gain of splitting a node with totals `(W_L + W_R, H_L + H_R)`.
pub fn split_score(w_l: f64, h_l: f64, w_r: f64, h_r: f64, lambda: f64) -> f64 {
    let w = w_l + w_r;
    let h = h_l + h_r;
    0.5 * (w_l * w_l / (h_l + lambda) + w_r * w_r / (h_r + lambda) - w * w / (h + lambda))
}

pub fn leaf_weight(w: f64, h: f64, lambda: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    -w / (h + lambda)
}

/// Uniform interior thresholds for one feature.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCandidates {
    pub feature: usize,
    pub thresholds: Vec<f64>,
}

impl FeatureCandidates {
    pub fn candidates(&self) -> impl Iterator<Item = SplitCandidate> + '_ {
        self.thresholds.iter().map(move |&threshold| SplitCandidate { feature: self.feature, threshold })
    }
}

/// `min + (max - min) k / (m + 1)` for `k = 1..=m`, per feature. Features
/// whose domain is empty or a single point are returned in `skipped`.
pub fn enumerate_candidates(domains: &[(f64, f64)], bins: usize) -> (Vec<FeatureCandidates>, Vec<usize>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (feature, &(lo, hi)) in domains.iter().enumerate() {
        if bins == 0 || lo.partial_cmp(&hi) != Some(Ordering::Less) || !lo.is_finite() || !hi.is_finite() {
            skipped.push(feature);
            continue;
        }
        let step = (hi - lo) / (bins as f64 + 1.0);
        let mut thresholds: Vec<f64> = (1..=bins).map(|k| lo + step * k as f64).collect();
        thresholds.dedup();
        thresholds.retain(|t| lo < *t && *t < hi);
        if thresholds.is_empty() {
            skipped.push(feature);
        } else {
            out.push(FeatureCandidates { feature, thresholds });
        }
    }
    (out, skipped)
}

/// Gradient totals of one node.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NodeStats {
    pub w: f64,
    pub h: f64,
}

/// Gate applied to every candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRule {
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_hessian: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChosenSplit {
    pub split: SplitCandidate,
    pub score: f64,
    pub left: NodeStats,
    pub right: NodeStats,
}

/// Scans `(candidate, left totals)` in order and keeps the first strictly
/// best admissible candidate, so ties resolve to the earliest one.
pub fn best_split(
    total: NodeStats,
    left_stats: impl IntoIterator<Item = (SplitCandidate, NodeStats)>,
    rule: &SplitRule,
) -> Option<ChosenSplit> {
    let mut best: Option<ChosenSplit> = None;
    for (split, left) in left_stats {
        let right = NodeStats { w: total.w - left.w, h: total.h - left.h };
        if left.h < rule.min_child_hessian || right.h < rule.min_child_hessian {
            continue;
        }
        let score = split_score(left.w, left.h, right.w, right.h, rule.lambda);
        if score.partial_cmp(&rule.gamma) != Some(Ordering::Greater) {
            continue;
        }
        if best.is_none_or(|b| score > b.score) {
            best = Some(ChosenSplit { split, score, left, right });
        }
    }
    best
}
