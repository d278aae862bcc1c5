//! Bone Soup: multi-objective model merging through a combination matrix of
//! backbone rewards, with quadratic and contextual-bandit testbeds, closed-form
//! oracles, front metrics, and a deterministic experiment harness.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod merging;
pub mod metrics;
pub mod rewards;
pub mod trainer;
pub mod types;

pub use error::{Error, ErrorClass, Result};
pub use matrix::{build_circulant, random_catalog, CombinationMatrix};
pub use merging::{extrapolate, merge, merge_aba, solve_coefficients};
pub use rewards::{BanditEnvironment, QuadraticReward, SoftmaxPolicy, World};
pub use trainer::{train_backbones, BackboneSet, TrainerConfig};
pub use types::{FrontPoint, MergeCoefficients, MethodTag, ParamVector, PreferenceVector};
