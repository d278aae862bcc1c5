//! The two reward families: quadratic-in-parameters rewards and expected
//! rewards of softmax policies in a contextual bandit, plus backbone
//! combinations, the preference-weighted testing reward, and the `World`
//! wrapper that the trainer and harness operate on.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{check_simplex, ParamVector, PreferenceVector, TypesError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("objective index {index} out of range for {count} objectives")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("backbone components mix quadratic and bandit rewards")]
    MixedFamilies,
    #[error("curvature matrix is not symmetric")]
    NotSymmetric,
    #[error("curvature matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid bandit environment: {0}")]
    BadEnvironment(String),
    #[error(transparent)]
    Types(#[from] TypesError),
}

/// Hessian shape of a quadratic reward: `k·I` or a full SPD matrix `K`.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Isotropic(f64),
    Full(DMatrix<f64>),
}

impl Curvature {
    /// Dense `K` for a `dim`-dimensional parameter space.
    pub fn matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Curvature::Isotropic(k) => DMatrix::identity(dim, dim) * *k,
            Curvature::Full(m) => m.clone(),
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Curvature::Isotropic(k) => v.iter().map(|x| k * x).collect(),
            Curvature::Full(m) => (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CurvatureRepr {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl Serialize for Curvature {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Curvature::Isotropic(k) => CurvatureRepr::Scalar(*k),
            Curvature::Full(m) => CurvatureRepr::Rows(crate::matrix::to_rows(m)),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Curvature {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match CurvatureRepr::deserialize(deserializer)? {
            CurvatureRepr::Scalar(k) => Ok(Curvature::Isotropic(k)),
            CurvatureRepr::Rows(rows) => crate::matrix::from_rows(&rows)
                .map(Curvature::Full)
                .ok_or_else(|| {
                    serde::de::Error::custom("curvature rows must form a square matrix")
                }),
        }
    }
}

/// `r(θ) = peak − (θ−θ*)ᵀ K (θ−θ*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticRewardRepr", into = "QuadraticRewardRepr")]
pub struct QuadraticReward {
    peak: f64,
    maximizer: ParamVector,
    curvature: Curvature,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticRewardRepr {
    peak: f64,
    maximizer: ParamVector,
    curvature: Curvature,
}

impl TryFrom<QuadraticRewardRepr> for QuadraticReward {
    type Error = RewardError;

    fn try_from(r: QuadraticRewardRepr) -> Result<Self, Self::Error> {
        QuadraticReward::new(r.peak, r.maximizer, r.curvature)
    }
}

impl From<QuadraticReward> for QuadraticRewardRepr {
    fn from(r: QuadraticReward) -> Self {
        Self {
            peak: r.peak,
            maximizer: r.maximizer,
            curvature: r.curvature,
        }
    }
}

impl QuadraticReward {
    pub fn new(
        peak: f64,
        maximizer: ParamVector,
        curvature: Curvature,
    ) -> Result<Self, RewardError> {
        let d = maximizer.dim();
        match &curvature {
            Curvature::Isotropic(k) => {
                if !(*k > 0.0 && k.is_finite()) {
                    return Err(RewardError::NotPositiveDefinite);
                }
            }
            Curvature::Full(m) => {
                if m.nrows() != d || m.ncols() != d {
                    return Err(RewardError::DimensionMismatch {
                        expected: d,
                        got: m.nrows(),
                    });
                }
                if (m - m.transpose()).amax() > 1e-12 {
                    return Err(RewardError::NotSymmetric);
                }
                if m.clone().cholesky().is_none() {
                    return Err(RewardError::NotPositiveDefinite);
                }
            }
        }
        Ok(Self {
            peak,
            maximizer,
            curvature,
        })
    }

    pub fn isotropic(peak: f64, maximizer: ParamVector, k: f64) -> Result<Self, RewardError> {
        Self::new(peak, maximizer, Curvature::Isotropic(k))
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn maximizer(&self) -> &ParamVector {
        &self.maximizer
    }

    pub fn curvature(&self) -> &Curvature {
        &self.curvature
    }

    pub fn dim(&self) -> usize {
        self.maximizer.dim()
    }

    /// The scalar `k` when the Hessian is `k·I`.
    pub fn isotropic_k(&self) -> Option<f64> {
        match self.curvature {
            Curvature::Isotropic(k) => Some(k),
            Curvature::Full(_) => None,
        }
    }

    fn offset(&self, point: &ParamVector) -> Result<Vec<f64>, RewardError> {
        if point.dim() != self.dim() {
            return Err(RewardError::DimensionMismatch {
                expected: self.dim(),
                got: point.dim(),
            });
        }
        Ok(point
            .as_slice()
            .iter()
            .zip(self.maximizer.as_slice())
            .map(|(p, m)| p - m)
            .collect())
    }

    pub fn evaluate(&self, point: &ParamVector) -> Result<f64, RewardError> {
        let delta = self.offset(point)?;
        let kd = self.curvature.apply(&delta);
        let quad: f64 = delta.iter().zip(&kd).map(|(a, b)| a * b).sum();
        Ok(self.peak - quad)
    }

    /// `∇r(θ) = −2K(θ−θ*)`.
    pub fn gradient(&self, point: &ParamVector) -> Result<Vec<f64>, RewardError> {
        let delta = self.offset(point)?;
        Ok(self
            .curvature
            .apply(&delta)
            .into_iter()
            .map(|v| -2.0 * v)
            .collect())
    }
}

pub fn eval_quadratic(reward: &QuadraticReward, point: &ParamVector) -> Result<f64, RewardError> {
    reward.evaluate(point)
}

/// Finite contextual bandit: context distribution plus one `C×A` reward table
/// per objective (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BanditRepr", into = "BanditRepr")]
pub struct BanditEnvironment {
    contexts: usize,
    arms: usize,
    context_probs: Vec<f64>,
    tables: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BanditRepr {
    context_probs: Vec<f64>,
    /// `reward_tables[j][s][a]`
    reward_tables: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<BanditRepr> for BanditEnvironment {
    type Error = RewardError;

    fn try_from(r: BanditRepr) -> Result<Self, Self::Error> {
        BanditEnvironment::new(r.context_probs, r.reward_tables)
    }
}

impl From<BanditEnvironment> for BanditRepr {
    fn from(env: BanditEnvironment) -> Self {
        let reward_tables = env
            .tables
            .iter()
            .map(|t| t.chunks(env.arms).map(<[f64]>::to_vec).collect())
            .collect();
        Self {
            context_probs: env.context_probs,
            reward_tables,
        }
    }
}

impl BanditEnvironment {
    pub fn new(
        context_probs: Vec<f64>,
        reward_tables: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, RewardError> {
        let bad = |m: &str| RewardError::BadEnvironment(m.to_string());
        let contexts = context_probs.len();
        if contexts == 0 {
            return Err(bad("need at least one context"));
        }
        check_simplex(&context_probs)?;
        if reward_tables.is_empty() {
            return Err(bad("need at least one objective"));
        }
        let arms = reward_tables[0].first().map_or(0, Vec::len);
        if arms < 2 {
            return Err(bad("need at least two arms"));
        }
        let mut tables = Vec::with_capacity(reward_tables.len());
        for table in reward_tables {
            if table.len() != contexts || table.iter().any(|row| row.len() != arms) {
                return Err(bad("every reward table must be contexts x arms"));
            }
            let flat: Vec<f64> = table.into_iter().flatten().collect();
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(bad("reward entries must be finite"));
            }
            tables.push(flat);
        }
        Ok(Self {
            contexts,
            arms,
            context_probs,
            tables,
        })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn objectives(&self) -> usize {
        self.tables.len()
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    pub fn reward(&self, objective: usize, context: usize, arm: usize) -> f64 {
        self.tables[objective][context * self.arms + arm]
    }

    /// `R(s,a) = Σ_j w_j r_j(s,a)`, row-major.
    pub fn combined_table(&self, weights: &[f64]) -> Result<Vec<f64>, RewardError> {
        if weights.len() != self.objectives() {
            return Err(RewardError::DimensionMismatch {
                expected: self.objectives(),
                got: weights.len(),
            });
        }
        let mut out = vec![0.0; self.contexts * self.arms];
        for (w, table) in weights.iter().zip(&self.tables) {
            for (o, r) in out.iter_mut().zip(table) {
                *o += w * r;
            }
        }
        Ok(out)
    }

    /// Expected value of an arbitrary `C×A` table under `policy`.
    pub fn expected(&self, table: &[f64], policy: &SoftmaxPolicy) -> f64 {
        let probs = policy.probabilities();
        self.context_probs
            .iter()
            .enumerate()
            .map(|(s, p)| {
                let row = s * self.arms..(s + 1) * self.arms;
                p * probs[row.clone()]
                    .iter()
                    .zip(&table[row])
                    .map(|(pi, r)| pi * r)
                    .sum::<f64>()
            })
            .sum()
    }

    fn check_policy(&self, policy: &SoftmaxPolicy) -> Result<(), RewardError> {
        if policy.contexts != self.contexts || policy.arms != self.arms {
            return Err(RewardError::DimensionMismatch {
                expected: self.contexts * self.arms,
                got: policy.contexts * policy.arms,
            });
        }
        Ok(())
    }
}

/// Numerically stable softmax of one logits row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `π(a|s) = softmax(logits[s])`, logits stored row-major as a `ParamVector`
/// so policies merge like any other parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    contexts: usize,
    arms: usize,
    logits: ParamVector,
}

impl SoftmaxPolicy {
    pub fn new(contexts: usize, arms: usize, logits: ParamVector) -> Result<Self, RewardError> {
        if logits.dim() != contexts * arms {
            return Err(RewardError::DimensionMismatch {
                expected: contexts * arms,
                got: logits.dim(),
            });
        }
        Ok(Self {
            contexts,
            arms,
            logits,
        })
    }

    pub fn uniform(contexts: usize, arms: usize) -> Self {
        Self {
            contexts,
            arms,
            logits: ParamVector::zeros(contexts * arms),
        }
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn logits(&self) -> &ParamVector {
        &self.logits
    }

    pub fn context_probs(&self, context: usize) -> Vec<f64> {
        softmax(&self.logits.as_slice()[context * self.arms..(context + 1) * self.arms])
    }

    /// Full `C×A` probability table, row-major.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.contexts)
            .flat_map(|s| self.context_probs(s))
            .collect()
    }

    /// Per-context total-variation distances to `other`.
    pub fn total_variation(&self, other: &SoftmaxPolicy) -> Vec<f64> {
        (0..self.contexts)
            .map(|s| {
                let p = self.context_probs(s);
                let q = other.context_probs(s);
                0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .collect()
    }
}

/// `Σ_s p(s) Σ_a π(a|s) r_j(s,a)`, computed by enumeration.
pub fn eval_policy_value(
    env: &BanditEnvironment,
    objective_index: usize,
    policy: &SoftmaxPolicy,
) -> Result<f64, RewardError> {
    if objective_index >= env.objectives() {
        return Err(RewardError::IndexOutOfRange {
            index: objective_index,
            count: env.objectives(),
        });
    }
    env.check_policy(policy)?;
    Ok(env.expected(&env.tables[objective_index], policy))
}

/// A single evaluable objective.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    Quadratic(QuadraticReward),
    /// Objective `objective` of a shared bandit; points are row-major logits.
    Bandit {
        env: Arc<BanditEnvironment>,
        objective: usize,
    },
}

impl RewardModel {
    pub fn evaluate(&self, point: &ParamVector) -> Result<f64, RewardError> {
        match self {
            RewardModel::Quadratic(q) => q.evaluate(point),
            RewardModel::Bandit { env, objective } => {
                let policy = SoftmaxPolicy::new(env.contexts(), env.arms(), point.clone())?;
                eval_policy_value(env, *objective, &policy)
            }
        }
    }

    fn is_quadratic(&self) -> bool {
        matches!(self, RewardModel::Quadratic(_))
    }
}

/// `h(θ) = Σ_j w_j r_j(θ)` with `w` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneReward {
    weights: Vec<f64>,
    components: Vec<RewardModel>,
}

impl BackboneReward {
    pub fn new(weights: Vec<f64>, components: Vec<RewardModel>) -> Result<Self, RewardError> {
        check_simplex(&weights)?;
        if weights.len() != components.len() {
            return Err(RewardError::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn eval_backbone(h: &BackboneReward, point: &ParamVector) -> Result<f64, RewardError> {
    let quadratic = h.components.iter().filter(|c| c.is_quadratic()).count();
    if quadratic != 0 && quadratic != h.components.len() {
        return Err(RewardError::MixedFamilies);
    }
    h.weights
        .iter()
        .zip(&h.components)
        .map(|(w, r)| Ok(w * r.evaluate(point)?))
        .sum()
}

/// `g_μ(θ) = Σ μ_i r_i(θ)`.
pub fn testing_reward(
    prefs: &PreferenceVector,
    rewards: &[RewardModel],
    point: &ParamVector,
) -> Result<f64, RewardError> {
    if rewards.len() != prefs.dim() {
        return Err(RewardError::DimensionMismatch {
            expected: prefs.dim(),
            got: rewards.len(),
        });
    }
    prefs
        .as_slice()
        .iter()
        .zip(rewards)
        .map(|(m, r)| Ok(m * r.evaluate(point)?))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticWorld {
    pub rewards: Vec<QuadraticReward>,
    pub reference: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditWorld {
    pub env: Arc<BanditEnvironment>,
    pub reference: SoftmaxPolicy,
}

/// A multi-objective problem together with its reference model (θ_sft / π_sft).
/// Every model in a world is a flat `ParamVector`; bandit models are logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum World {
    Quadratic(QuadraticWorld),
    Bandit(BanditWorld),
}

impl World {
    pub fn quadratic(
        rewards: Vec<QuadraticReward>,
        reference: ParamVector,
    ) -> Result<Self, RewardError> {
        let d = reference.dim();
        if rewards.len() < 2 {
            return Err(RewardError::DimensionMismatch {
                expected: 2,
                got: rewards.len(),
            });
        }
        if let Some(r) = rewards.iter().find(|r| r.dim() != d) {
            return Err(RewardError::DimensionMismatch {
                expected: d,
                got: r.dim(),
            });
        }
        Ok(World::Quadratic(QuadraticWorld { rewards, reference }))
    }

    pub fn bandit(env: BanditEnvironment, reference: SoftmaxPolicy) -> Result<Self, RewardError> {
        env.check_policy(&reference)?;
        if env.objectives() < 2 {
            return Err(RewardError::BadEnvironment(
                "need at least two objectives".into(),
            ));
        }
        Ok(World::Bandit(BanditWorld {
            env: Arc::new(env),
            reference,
        }))
    }

    /// The two rewards of the worked two-objective example:
    /// `r₁ = −(x−1)²−(y−1)²`, `r₂ = −(x−3)²−4(y+1)²`.
    pub fn example21() -> Self {
        let r1 = QuadraticReward::isotropic(0.0, ParamVector::new(vec![1.0, 1.0]).unwrap(), 1.0)
            .unwrap();
        let r2 = QuadraticReward::new(
            0.0,
            ParamVector::new(vec![3.0, -1.0]).unwrap(),
            Curvature::Full(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0])),
        )
        .unwrap();
        World::quadratic(vec![r1, r2], ParamVector::zeros(2)).unwrap()
    }

    pub fn objectives(&self) -> usize {
        match self {
            World::Quadratic(w) => w.rewards.len(),
            World::Bandit(w) => w.env.objectives(),
        }
    }

    pub fn dim(&self) -> usize {
        self.reference().dim()
    }

    pub fn reference(&self) -> &ParamVector {
        match self {
            World::Quadratic(w) => &w.reference,
            World::Bandit(w) => w.reference.logits(),
        }
    }

    pub fn reward_models(&self) -> Vec<RewardModel> {
        match self {
            World::Quadratic(w) => w
                .rewards
                .iter()
                .cloned()
                .map(RewardModel::Quadratic)
                .collect(),
            World::Bandit(w) => (0..w.env.objectives())
                .map(|objective| RewardModel::Bandit {
                    env: Arc::clone(&w.env),
                    objective,
                })
                .collect(),
        }
    }

    /// Reward vector `(r_1(θ), …, r_n(θ))`.
    pub fn evaluate(&self, point: &ParamVector) -> Result<Vec<f64>, RewardError> {
        match self {
            World::Quadratic(w) => w.rewards.iter().map(|r| r.evaluate(point)).collect(),
            World::Bandit(w) => {
                let policy = SoftmaxPolicy::new(w.env.contexts(), w.env.arms(), point.clone())?;
                (0..w.env.objectives())
                    .map(|j| eval_policy_value(&w.env, j, &policy))
                    .collect()
            }
        }
    }

    /// Random quadratic world with isotropic Hessians `k ∈ k_range`,
    /// maximizers in `[-theta_bound, theta_bound]^dim`, zero peaks, and the
    /// origin as reference.
    pub fn random_quadratic<R: Rng>(
        rng: &mut R,
        objectives: usize,
        dim: usize,
        k_range: (f64, f64),
        theta_bound: f64,
    ) -> Result<Self, RewardError> {
        let rewards = (0..objectives)
            .map(|_| {
                let k = rng.gen_range(k_range.0..=k_range.1);
                let theta = (0..dim)
                    .map(|_| rng.gen_range(-theta_bound..=theta_bound))
                    .collect();
                QuadraticReward::isotropic(0.0, ParamVector::new(theta)?, k)
            })
            .collect::<Result<Vec<_>, _>>()?;
        World::quadratic(rewards, ParamVector::zeros(dim))
    }

    /// Random bandit with rewards in `[0, 1)`, context probabilities bounded
    /// away from zero, and a uniform reference policy.
    pub fn random_bandit<R: Rng>(
        rng: &mut R,
        objectives: usize,
        contexts: usize,
        arms: usize,
    ) -> Result<Self, RewardError> {
        let raw: Vec<f64> = (0..contexts).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        // absorb rounding so the vector sums to one
        let rest: f64 = probs[1..].iter().sum();
        probs[0] = 1.0 - rest;
        let tables = (0..objectives)
            .map(|_| {
                (0..contexts)
                    .map(|_| (0..arms).map(|_| rng.gen::<f64>()).collect())
                    .collect()
            })
            .collect();
        let env = BanditEnvironment::new(probs, tables)?;
        World::bandit(env, SoftmaxPolicy::uniform(contexts, arms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn two_arm_env(r: [f64; 2]) -> BanditEnvironment {
        BanditEnvironment::new(vec![1.0], vec![vec![r.to_vec()], vec![vec![0.0, 0.0]]]).unwrap()
    }

    #[test]
    fn quadratic_examples() {
        let world = World::example21();
        let models = world.reward_models();
        assert_eq!(models[0].evaluate(&pv(&[1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(models[1].evaluate(&pv(&[2.0, 0.0])).unwrap(), -5.0);
        let q = QuadraticReward::isotropic(3.5, pv(&[0.2, -1.0, 4.0]), 2.0).unwrap();
        assert_eq!(eval_quadratic(&q, &pv(&[0.2, -1.0, 4.0])).unwrap(), 3.5);
        assert!(matches!(
            q.evaluate(&pv(&[1.0])),
            Err(RewardError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn curvature_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(
            QuadraticReward::new(0.0, pv(&[0.0, 0.0]), Curvature::Full(asym)),
            Err(RewardError::NotSymmetric)
        );
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            QuadraticReward::new(0.0, pv(&[0.0, 0.0]), Curvature::Full(indefinite)),
            Err(RewardError::NotPositiveDefinite)
        );
        assert_eq!(
            QuadraticReward::isotropic(0.0, pv(&[0.0]), 0.0),
            Err(RewardError::NotPositiveDefinite)
        );
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let world = World::example21();
        let World::Quadratic(w) = &world else {
            unreachable!()
        };
        let p = pv(&[0.3, -0.7]);
        let g = w.rewards[1].gradient(&p).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut plus = p.as_slice().to_vec();
            let mut minus = p.as_slice().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (w.rewards[1].evaluate(&pv(&plus)).unwrap()
                - w.rewards[1].evaluate(&pv(&minus)).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn policy_value_examples() {
        let env = two_arm_env([1.0, 0.0]);
        let uniform = SoftmaxPolicy::uniform(1, 2);
        assert!((eval_policy_value(&env, 0, &uniform).unwrap() - 0.5).abs() < 1e-15);

        let peaked = SoftmaxPolicy::new(1, 2, pv(&[10.0, 0.0])).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((eval_policy_value(&env, 0, &peaked).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.99995).abs() < 1e-5);

        let constant =
            BanditEnvironment::new(vec![0.3, 0.7], vec![vec![vec![2.5; 3]; 2]; 2]).unwrap();
        let policy = SoftmaxPolicy::new(2, 3, pv(&[1.0, -2.0, 0.3, 4.0, 0.0, 0.0])).unwrap();
        assert!((eval_policy_value(&constant, 1, &policy).unwrap() - 2.5).abs() < 1e-12);

        assert!(matches!(
            eval_policy_value(&env, 2, &uniform),
            Err(RewardError::IndexOutOfRange { index: 2, count: 2 })
        ));
    }

    #[test]
    fn bandit_environment_validation() {
        assert!(BanditEnvironment::new(vec![0.5, 0.6], vec![vec![vec![0.0, 1.0]; 2]]).is_err());
        assert!(BanditEnvironment::new(vec![1.0], vec![vec![vec![0.0]]]).is_err());
        assert!(BanditEnvironment::new(vec![1.0], vec![vec![vec![0.0, f64::NAN]]]).is_err());
        assert!(
            BanditEnvironment::new(vec![1.0], vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]]).is_err()
        );
    }

    #[test]
    fn backbone_examples() {
        let world = World::example21();
        let models = world.reward_models();
        let p = pv(&[0.4, -2.0]);

        let e1 = BackboneReward::new(vec![1.0, 0.0], models.clone()).unwrap();
        assert_eq!(
            eval_backbone(&e1, &p).unwrap(),
            models[0].evaluate(&p).unwrap()
        );

        // h1 = 0.4 r1 + 0.6 r2 peaks at (2.2, -5/7)
        let h1 = BackboneReward::new(vec![0.4, 0.6], models.clone()).unwrap();
        let peak = eval_backbone(&h1, &pv(&[2.2, -5.0 / 7.0])).unwrap();
        for (dx, dy) in [
            (1e-3, 0.0),
            (-1e-3, 0.0),
            (0.0, 1e-3),
            (0.0, -1e-3),
            (0.5, 0.5),
        ] {
            let q = eval_backbone(&h1, &pv(&[2.2 + dx, -5.0 / 7.0 + dy])).unwrap();
            assert!(q < peak);
        }

        let same = BackboneReward::new(vec![0.5, 0.5], vec![models[0].clone(), models[0].clone()])
            .unwrap();
        assert!(
            (eval_backbone(&same, &p).unwrap() - models[0].evaluate(&p).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn backbone_rejects_mixed_families() {
        let world = World::example21();
        let mut models = world.reward_models();
        models[1] = RewardModel::Bandit {
            env: Arc::new(two_arm_env([1.0, 0.0])),
            objective: 0,
        };
        let h = BackboneReward::new(vec![0.5, 0.5], models).unwrap();
        assert_eq!(
            eval_backbone(&h, &pv(&[0.0, 0.0])),
            Err(RewardError::MixedFamilies)
        );
        assert!(BackboneReward::new(vec![0.5, 0.6], World::example21().reward_models()).is_err());
    }

    #[test]
    fn testing_reward_examples() {
        let world = World::example21();
        let models = world.reward_models();
        let half = PreferenceVector::new(vec![0.5, 0.5]).unwrap();
        assert!((testing_reward(&half, &models, &pv(&[2.0, -0.6])).unwrap() + 2.6).abs() < 1e-12);
        assert!((testing_reward(&half, &models, &pv(&[2.0, 0.0])).unwrap() + 3.5).abs() < 1e-12);
        let e1 = PreferenceVector::basis(2, 0).unwrap();
        let p = pv(&[-1.0, 7.0]);
        assert_eq!(
            testing_reward(&e1, &models, &p).unwrap(),
            models[0].evaluate(&p).unwrap()
        );
        assert!(matches!(
            testing_reward(&half, &models[..1], &p),
            Err(RewardError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn world_serde_round_trip() {
        let world = World::example21();
        let json = serde_json::to_string(&world).unwrap();
        let back: World = serde_json::from_str(&json).unwrap();
        assert_eq!(back, world);
    }

    proptest! {
        #[test]
        fn quadratic_is_strictly_concave_around_peak(
            x in prop::collection::vec(-5.0f64..5.0, 3),
            m in prop::collection::vec(-5.0f64..5.0, 3),
            k in 0.1f64..10.0,
        ) {
            let q = QuadraticReward::isotropic(1.0, pv(&m), k).unwrap();
            let p = pv(&x);
            prop_assume!(p.distance_sq(&pv(&m)).unwrap() > 1e-12);
            prop_assert!(q.evaluate(&p).unwrap() < 1.0);
        }

        #[test]
        fn testing_reward_is_linear_in_preference(
            a in 0.0f64..1.0, mu1 in 0.0f64..1.0, mu2 in 0.0f64..1.0,
            x in -5.0f64..5.0, y in -5.0f64..5.0,
        ) {
            let models = World::example21().reward_models();
            let p = pv(&[x, y]);
            let m1 = PreferenceVector::new(vec![mu1, 1.0 - mu1]).unwrap();
            let m2 = PreferenceVector::new(vec![mu2, 1.0 - mu2]).unwrap();
            let mix_first = a * mu1 + (1.0 - a) * mu2;
            let mix = PreferenceVector::new(vec![mix_first, 1.0 - mix_first]).unwrap();
            let lhs = testing_reward(&mix, &models, &p).unwrap();
            let rhs = a * testing_reward(&m1, &models, &p).unwrap()
                + (1.0 - a) * testing_reward(&m2, &models, &p).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn policy_value_shift_invariant(
            logits in prop::collection::vec(-4.0f64..4.0, 6),
            shift in -10.0f64..10.0,
            row in 0usize..2,
        ) {
            let env = BanditEnvironment::new(
                vec![0.4, 0.6],
                vec![vec![vec![0.1, 0.9, 0.4], vec![0.3, 0.2, 0.8]]],
            ).unwrap();
            let base = SoftmaxPolicy::new(2, 3, pv(&logits)).unwrap();
            let mut shifted = logits.clone();
            for v in &mut shifted[row * 3..row * 3 + 3] { *v += shift; }
            let moved = SoftmaxPolicy::new(2, 3, pv(&shifted)).unwrap();
            let a = eval_policy_value(&env, 0, &base).unwrap();
            let b = eval_policy_value(&env, 0, &moved).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            for s in 0..2 {
                let total: f64 = base.context_probs(s).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn backbone_with_identity_row_reproduces_reward(
            i in 0usize..2, x in -5.0f64..5.0, y in -5.0f64..5.0,
        ) {
            let models = World::example21().reward_models();
            let mut w = vec![0.0; 2];
            w[i] = 1.0;
            let h = BackboneReward::new(w, models.clone()).unwrap();
            let p = pv(&[x, y]);
            prop_assert_eq!(eval_backbone(&h, &p).unwrap(), models[i].evaluate(&p).unwrap());
        }
    }
}
