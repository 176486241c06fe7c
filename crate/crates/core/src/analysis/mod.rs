//! Condition-level statistics on orthonormalized trajectories.

mod angles;
mod gaussian;
mod mwu;
mod segment;

pub use angles::principal_angles;
pub use gaussian::{fit_condition_gaussian, kl_gaussian, kl_matrix, ConditionDistribution, KlMatrix, KlMode, DEFAULT_RIDGE};
pub use mwu::{mwu_test, style_separation_test, MwuMethod, MwuResult, StyleSeparation};
pub use segment::{segment_by_character, CharSegment};
