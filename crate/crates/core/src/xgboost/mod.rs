//! Plaintext gradient boosting: losses, split scoring, CART growth and
//! ensembles.

pub mod grower;
pub mod loss;
pub mod model;
pub mod split;
pub mod train;
pub mod tree;

pub use grower::{
    grow_tree, local_level_stats, GrowConfig, GrownTree, LevelPlan, LevelRecord, LevelStatsSource,
};
pub use loss::{logistic_gradients, GradientPair};
pub use model::{BoostModel, OneVsRest};
pub use split::{enumerate_candidates, leaf_weight, split_score, FeatureCandidates, SplitRule};
pub use train::{centralized_train, BaseScore, BoostConfig};
pub use tree::{CartNode, CartTree, Features, SplitCandidate};
