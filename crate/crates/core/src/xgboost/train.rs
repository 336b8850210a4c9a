//! The boosting loop on pooled data.

use rand_chacha::ChaCha20Rng;

use super::grower::{grow_tree, GrowConfig, LevelRecord, PooledStats};
use super::loss::{logistic_gradients, prior_log_odds, GradientPair};
use super::model::{BoostModel, OneVsRest};
use super::split::{enumerate_candidates, SplitRule};
use super::tree::Features;
use crate::codec::DEFAULT_FRAC_BITS;
use crate::error::Result;
use crate::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseScore {
    /// Log-odds of the training positive rate.
    Prior,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoostConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub feature_subsample: f64,
    pub bins: usize,
    pub min_child_hessian: f64,
    pub base_score: BaseScore,
    /// Gradients are rounded to this fixed-point grid before aggregation.
    pub frac_bits: u32,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 10,
            max_depth: 3,
            lambda: 1.0,
            gamma: 0.0,
            learning_rate: 0.3,
            feature_subsample: 1.0,
            bins: 8,
            min_child_hessian: 1.0,
            base_score: BaseScore::Prior,
            frac_bits: DEFAULT_FRAC_BITS,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn grow_config(&self) -> GrowConfig {
        GrowConfig {
            max_depth: self.max_depth,
            rule: SplitRule {
                lambda: self.lambda,
                gamma: self.gamma,
                min_child_hessian: self.min_child_hessian,
            },
            feature_subsample: self.feature_subsample,
        }
    }

    /// The stream that draws every level's feature subsample.
    pub fn feature_rng(&self) -> ChaCha20Rng {
        stream_rng(self.seed, "feature-subsample")
    }

    pub fn base_margin(&self, positives: f64, count: f64) -> f64 {
        match self.base_score {
            BaseScore::Prior => prior_log_odds(positives, count),
            BaseScore::Fixed(v) => v,
        }
    }
}

pub fn compute_gradients(margins: &[f64], labels: &[f64], frac_bits: u32) -> Vec<GradientPair> {
    margins.iter().zip(labels).map(|(&m, &y)| logistic_gradients(m, y).quantized(frac_bits)).collect()
}

pub fn centralized_train<R: Features>(
    rows: &[R],
    labels: &[f64],
    domains: &[(f64, f64)],
    cfg: &BoostConfig,
) -> Result<BoostModel> {
    Ok(centralized_train_traced(rows, labels, domains, cfg)?.0)
}

/// Also returns every level's aggregated statistics, tree by tree.
pub fn centralized_train_traced<R: Features>(
    rows: &[R],
    labels: &[f64],
    domains: &[(f64, f64)],
    cfg: &BoostConfig,
) -> Result<(BoostModel, Vec<Vec<LevelRecord>>)> {
    let positives: f64 = labels.iter().sum();
    let base = cfg.base_margin(positives, labels.len() as f64);
    let mut model = BoostModel::new(cfg.learning_rate, base);
    let (candidates, _) = enumerate_candidates(domains, cfg.bins);
    let grow = cfg.grow_config();
    let mut rng = cfg.feature_rng();
    let mut margins = vec![base; rows.len()];
    let mut trace = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let grads = compute_gradients(&margins, labels, cfg.frac_bits);
        let mut source = PooledStats { rows, grads: &grads };
        let grown = grow_tree(&mut source, &candidates, &grow, &mut rng)?;
        for (m, x) in margins.iter_mut().zip(rows) {
            *m += cfg.learning_rate * grown.tree.output(x);
        }
        model.trees.push(grown.tree);
        trace.push(grown.levels);
    }
    Ok((model, trace))
}

/// One binary model per class label `0..classes`.
pub fn centralized_train_ovr<R: Features>(
    rows: &[R],
    labels: &[f64],
    classes: usize,
    domains: &[(f64, f64)],
    cfg: &BoostConfig,
) -> Result<OneVsRest> {
    let models = (0..classes)
        .map(|c| {
            let binary: Vec<f64> = labels.iter().map(|&y| f64::from(y == c as f64)).collect();
            centralized_train(rows, &binary, domains, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OneVsRest { models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    #[test]
    fn zero_rounds_predicts_majority() {
        let rows = vec![vec![0.0]; 10];
        let labels: Vec<f64> = (0..10).map(|i| f64::from(i < 7)).collect();
        let cfg = BoostConfig { rounds: 0, ..Default::default() };
        let model = centralized_train(&rows, &labels, &[(0.0, 1.0)], &cfg).unwrap();
        assert!(model.trees.is_empty());
        assert_eq!(model.accuracy(&rows, &labels), 0.7);
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let mut rng = seeded_rng(4);
        let rows: Vec<Vec<f64>> =
            (0..200).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let labels: Vec<f64> = rows.iter().map(|r| f64::from(r[0] > 0.3 && r[1] > 0.6)).collect();
        let cfg =
            BoostConfig { rounds: 5, max_depth: 2, bins: 9, min_child_hessian: 0.0, ..Default::default() };
        let model = centralized_train(&rows, &labels, &[(0.0, 1.0), (0.0, 1.0)], &cfg).unwrap();
        assert_eq!(model.accuracy(&rows, &labels), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = seeded_rng(8);
        let rows: Vec<Vec<f64>> =
            (0..100).map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let labels: Vec<f64> = rows.iter().map(|r| f64::from(r[0] + r[3] > 1.0)).collect();
        let cfg = BoostConfig { rounds: 4, feature_subsample: 0.6, ..Default::default() };
        let a = centralized_train(&rows, &labels, &[(0.0, 1.0); 5], &cfg).unwrap();
        let b = centralized_train(&rows, &labels, &[(0.0, 1.0); 5], &cfg).unwrap();
        assert_eq!(a.dump(), b.dump());
    }

    #[test]
    fn one_vs_rest_three_classes() {
        let rows: Vec<Vec<f64>> = (0..90).map(|i| vec![(i % 3) as f64]).collect();
        let labels: Vec<f64> = (0..90).map(|i| (i % 3) as f64).collect();
        let cfg =
            BoostConfig { rounds: 3, max_depth: 2, bins: 5, min_child_hessian: 0.0, ..Default::default() };
        let ovr = centralized_train_ovr(&rows, &labels, 3, &[(0.0, 2.0)], &cfg).unwrap();
        assert_eq!(ovr.accuracy(&rows, &labels), 1.0);
    }
}
