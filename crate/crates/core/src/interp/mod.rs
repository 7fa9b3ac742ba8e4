//! Dimension-level interpretability and spatially cross-validated skill.

pub mod folds;
pub mod forest;
pub mod skill;

pub use crate::ndcore::stats::spearman;
pub use folds::{spatial_blocks, FoldAssignment};
pub use forest::{rf_fit, rf_predict, RfConfig, RfModel, Target};
pub use skill::{
    cv_score, dimension_dictionary, joint_gain, perm_importance, perm_importance_with, r2_score, region_members, region_skill,
    skill_matrix, target_of, CvResult, DictionaryConfig, DimensionDictionary, DimensionEntry, JointGain, MetricKind,
    RegionConfig, RegionSkill, SkillEntry, SkillMatrix, write_regions_csv,
};
