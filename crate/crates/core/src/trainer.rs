//! Backbone training.
//!
//! Quadratic world: the regularizer toward the reference is `η‖θ−θ_ref‖²`,
//! solved either in closed form or by plain fixed-step gradient ascent.
//! Bandit world: the regularizer is the true per-context KL divergence to the
//! reference policy, maximized by exact-gradient ascent on the logits,
//! preconditioned by the per-context softmax Fisher matrix, with step halving
//! whenever a step would lower the objective. The Gibbs policy
//! `π* ∝ π_ref·exp(R/η)` is the closed-form optimum used as the oracle.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{build_circulant, CombinationMatrix};
use crate::merging::merge;
use crate::metrics::{auto_reference, hypervolume};
use crate::rewards::{softmax, BanditEnvironment, QuadraticReward, SoftmaxPolicy, World};
use crate::types::{check_simplex, ParamVector, PreferenceVector};

/// Maximum objective gap to the Gibbs optimum accepted by [`train_bandit_kl`].
pub const BANDIT_GAP_TOL: f64 = 1e-8;

/// Bandit ascent stops once every preconditioned direction component is
/// below this; `log π` is then within `STATIONARY_TOL/η` of the optimum.
const STATIONARY_TOL: f64 = 1e-13;

/// Halvings tried before a bandit step is declared stationary.
const MAX_HALVINGS: usize = 60;

pub const DEFAULT_BETA_CANDIDATES: [f64; 3] = [0.8, 0.7, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Regularization strength η.
    pub eta: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Fraction of `steps` used for short-budget β selection.
    pub budget_fraction: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            steps: 50_000,
            learning_rate: 0.05,
            budget_fraction: 0.2,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("trainer: {m}")));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be >= 0");
        }
        if self.steps == 0 {
            return bad("steps must be > 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad("budget_fraction must be in (0, 1]");
        }
        Ok(())
    }

    /// Step count for short-budget runs, at least one.
    pub fn short_steps(&self) -> usize {
        ((self.steps as f64 * self.budget_fraction).ceil() as usize).max(1)
    }
}

/// Maximizer of `Σ w_j r_j(θ) − η‖θ−reference‖²`, i.e. the solution of
/// `(Σ w_j K_j + ηI) θ = Σ w_j K_j θ_j* + η·reference`.
pub fn train_quadratic_closed_form(
    rewards: &[QuadraticReward],
    weights: &[f64],
    eta: f64,
    reference: &ParamVector,
) -> Result<ParamVector> {
    check_simplex(weights)?;
    if weights.len() != rewards.len() {
        return Err(Error::InvalidConfig(format!(
            "{} weights for {} rewards",
            weights.len(),
            rewards.len()
        )));
    }
    let d = reference.dim();
    let mut lhs = DMatrix::identity(d, d) * eta;
    let mut rhs = DVector::from_column_slice(reference.as_slice()) * eta;
    for (w, r) in weights.iter().zip(rewards) {
        if r.dim() != d {
            return Err(crate::rewards::RewardError::DimensionMismatch {
                expected: d,
                got: r.dim(),
            }
            .into());
        }
        let k = r.curvature().matrix(d);
        rhs += &k * DVector::from_column_slice(r.maximizer().as_slice()) * *w;
        lhs += k * *w;
    }
    let solution = lhs.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    Ok(ParamVector::new(solution.iter().copied().collect())?)
}

/// Value and gradient of `Σ w_j r_j(θ) − η‖θ−reference‖²`.
pub fn quadratic_objective<'a>(
    rewards: &'a [QuadraticReward],
    weights: &'a [f64],
    eta: f64,
    reference: &'a ParamVector,
) -> impl Fn(&ParamVector) -> Result<(f64, Vec<f64>)> + 'a {
    move |theta: &ParamVector| {
        let mut value = -eta * theta.distance_sq(reference)?;
        let mut grad: Vec<f64> = theta
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .map(|(t, r)| -2.0 * eta * (t - r))
            .collect();
        for (w, r) in weights.iter().zip(rewards) {
            value += w * r.evaluate(theta)?;
            for (g, gi) in grad.iter_mut().zip(r.gradient(theta)?) {
                *g += w * gi;
            }
        }
        Ok((value, grad))
    }
}

/// `config.steps` plain ascent steps `θ ← θ + lr·∇f(θ)` from `start`.
pub fn train_gradient<F>(
    objective: F,
    start: &ParamVector,
    config: &TrainerConfig,
) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<(f64, Vec<f64>)>,
{
    let mut theta = start.as_slice().to_vec();
    for step in 0..config.steps {
        let current =
            ParamVector::new(theta.clone()).map_err(|_| Error::NonFiniteValue { step })?;
        let (value, grad) = objective(&current)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteValue { step });
        }
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += config.learning_rate * g;
        }
    }
    ParamVector::new(theta).map_err(|_| Error::NonFiniteValue { step: config.steps })
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// `E_s[ E_{a∼π}[R(s,a)] − η·KL(π(·|s) ‖ π_ref(·|s)) ]` for a combined table `R`.
pub fn bandit_kl_objective(
    env: &BanditEnvironment,
    table: &[f64],
    eta: f64,
    reference: &SoftmaxPolicy,
    policy: &SoftmaxPolicy,
) -> f64 {
    let arms = env.arms();
    env.context_probs()
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let row = s * arms..(s + 1) * arms;
            let log_pi = log_softmax(&policy.logits().as_slice()[row.clone()]);
            let log_ref = log_softmax(&reference.logits().as_slice()[row.clone()]);
            let value: f64 = log_pi
                .iter()
                .zip(&log_ref)
                .zip(&table[row])
                .map(|((lp, lr), r)| lp.exp() * (r - eta * (lp - lr)))
                .sum();
            p * value
        })
        .sum()
}

/// Exact gradient of [`bandit_kl_objective`] with respect to the logits:
/// `p(s)·π(a|s)·(A(s,a) − Σ_b π(b|s)A(s,b))`, `A = R − η log(π/π_ref)`.
pub fn bandit_kl_gradient(
    env: &BanditEnvironment,
    table: &[f64],
    eta: f64,
    reference: &SoftmaxPolicy,
    logits: &[f64],
) -> Vec<f64> {
    let arms = env.arms();
    let mut grad = vec![0.0; logits.len()];
    for (s, p) in env.context_probs().iter().enumerate() {
        let row = s * arms..(s + 1) * arms;
        let log_pi = log_softmax(&logits[row.clone()]);
        let log_ref = log_softmax(&reference.logits().as_slice()[row.clone()]);
        let adv: Vec<f64> = log_pi
            .iter()
            .zip(&log_ref)
            .zip(&table[row.clone()])
            .map(|((lp, lr), r)| r - eta * (lp - lr))
            .collect();
        let mean: f64 = log_pi.iter().zip(&adv).map(|(lp, a)| lp.exp() * a).sum();
        for (a, g) in grad[row].iter_mut().enumerate() {
            *g = p * log_pi[a].exp() * (adv[a] - mean);
        }
    }
    grad
}

/// Gibbs optimum `π*(a|s) ∝ π_ref(a|s)·exp(R(s,a)/η)`, logits normalized to
/// log-probabilities.
pub fn bandit_kl_closed_form(
    env: &BanditEnvironment,
    weights: &[f64],
    eta: f64,
    reference: &SoftmaxPolicy,
) -> Result<SoftmaxPolicy> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(
            "bandit KL training needs eta > 0".into(),
        ));
    }
    let table = env.combined_table(weights)?;
    let arms = env.arms();
    let mut logits = Vec::with_capacity(table.len());
    for s in 0..env.contexts() {
        let row = s * arms..(s + 1) * arms;
        let log_ref = log_softmax(&reference.logits().as_slice()[row.clone()]);
        let raw: Vec<f64> = log_ref
            .iter()
            .zip(&table[row])
            .map(|(lr, r)| lr + r / eta)
            .collect();
        logits.extend(log_softmax(&raw));
    }
    Ok(SoftmaxPolicy::new(
        env.contexts(),
        arms,
        ParamVector::new(logits)?,
    )?)
}

/// Result of a bandit ascent run.
#[derive(Debug, Clone)]
pub struct BanditAscent {
    pub policy: SoftmaxPolicy,
    /// Objective after each accepted iteration (starting value first).
    pub trace: Vec<f64>,
}

/// The gradient of row `s` divided by `p(s)·π(a|s)`: `A(s,a) − Σ_b π(b|s)A(s,b)`.
/// This is the natural-gradient direction of a softmax row. Plain logit
/// gradients scale with `π(a|s)` and stall on arms whose optimal probability
/// is `≈ e^{−ΔR/η}`; the preconditioned direction contracts `log π − log π*`
/// at a rate independent of the probabilities.
fn bandit_kl_direction(
    env: &BanditEnvironment,
    table: &[f64],
    eta: f64,
    reference: &SoftmaxPolicy,
    logits: &[f64],
) -> Vec<f64> {
    let arms = env.arms();
    let mut dir = vec![0.0; logits.len()];
    for s in 0..env.contexts() {
        let row = s * arms..(s + 1) * arms;
        let log_pi = log_softmax(&logits[row.clone()]);
        let log_ref = log_softmax(&reference.logits().as_slice()[row.clone()]);
        let adv: Vec<f64> = log_pi
            .iter()
            .zip(&log_ref)
            .zip(&table[row.clone()])
            .map(|((lp, lr), r)| r - eta * (lp - lr))
            .collect();
        let mean: f64 = log_pi.iter().zip(&adv).map(|(lp, a)| lp.exp() * a).sum();
        for (d, a) in dir[row].iter_mut().zip(&adv) {
            *d = a - mean;
        }
    }
    dir
}

/// Preconditioned exact-gradient ascent from the reference policy. Each
/// iteration starts from `learning_rate` and halves until the objective does
/// not decrease; the objective sequence is therefore non-decreasing.
pub fn ascend_bandit_kl(
    env: &BanditEnvironment,
    weights: &[f64],
    eta: f64,
    reference: &SoftmaxPolicy,
    steps: usize,
    learning_rate: f64,
    record_trace: bool,
) -> Result<BanditAscent> {
    let table = env.combined_table(weights)?;
    let (contexts, arms) = (env.contexts(), env.arms());
    let policy_of = |logits: &[f64]| -> Result<SoftmaxPolicy> {
        Ok(SoftmaxPolicy::new(
            contexts,
            arms,
            ParamVector::new(logits.to_vec())?,
        )?)
    };
    let mut logits = reference.logits().as_slice().to_vec();
    let mut value = bandit_kl_objective(env, &table, eta, reference, &policy_of(&logits)?);
    let mut trace = if record_trace {
        vec![value]
    } else {
        Vec::new()
    };
    'outer: for step in 0..steps {
        let grad = bandit_kl_direction(env, &table, eta, reference, &logits);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteValue { step });
        }
        if grad.iter().all(|g| g.abs() < STATIONARY_TOL) {
            break;
        }
        let mut lr = learning_rate;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = logits.iter().zip(&grad).map(|(l, g)| l + lr * g).collect();
            if candidate.iter().all(|v| v.is_finite()) {
                let next =
                    bandit_kl_objective(env, &table, eta, reference, &policy_of(&candidate)?);
                // equal values are rejected: near the optimum they let the
                // iterate wander at rounding level without ever stopping
                if next > value {
                    logits = candidate;
                    value = next;
                    if record_trace {
                        trace.push(value);
                    }
                    continue 'outer;
                }
            }
            lr *= 0.5;
        }
        // no improving step at any scale: stationary to machine precision
        break;
    }
    Ok(BanditAscent {
        policy: policy_of(&logits)?,
        trace,
    })
}

/// Trains a KL-regularized policy and certifies it against the Gibbs optimum.
pub fn train_bandit_kl(
    env: &BanditEnvironment,
    weights: &[f64],
    eta: f64,
    reference: &SoftmaxPolicy,
    config: &TrainerConfig,
) -> Result<SoftmaxPolicy> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(
            "bandit KL training needs eta > 0".into(),
        ));
    }
    check_simplex(weights)?;
    let run = ascend_bandit_kl(
        env,
        weights,
        eta,
        reference,
        config.steps,
        config.learning_rate,
        false,
    )?;
    let optimum = bandit_kl_closed_form(env, weights, eta, reference)?;
    let table = env.combined_table(weights)?;
    let gap = bandit_kl_objective(env, &table, eta, reference, &optimum)
        - bandit_kl_objective(env, &table, eta, reference, &run.policy);
    if gap > BANDIT_GAP_TOL {
        return Err(Error::NonConvergence { gap });
    }
    Ok(run.policy)
}

/// Full training for weights `w` in either world.
pub fn train_weighted(
    world: &World,
    weights: &[f64],
    config: &TrainerConfig,
) -> Result<ParamVector> {
    match world {
        World::Quadratic(q) => {
            train_quadratic_closed_form(&q.rewards, weights, config.eta, &q.reference)
        }
        World::Bandit(b) => Ok(
            train_bandit_kl(&b.env, weights, config.eta, &b.reference, config)?
                .logits()
                .clone(),
        ),
    }
}

/// Short-budget training (`config.short_steps()` iterations, no convergence
/// certificate) used when screening β candidates.
pub fn train_weighted_short(
    world: &World,
    weights: &[f64],
    config: &TrainerConfig,
) -> Result<ParamVector> {
    let steps = config.short_steps();
    match world {
        World::Quadratic(q) => {
            check_simplex(weights)?;
            let short = TrainerConfig {
                steps,
                ..config.clone()
            };
            let objective = quadratic_objective(&q.rewards, weights, config.eta, &q.reference);
            train_gradient(objective, &q.reference, &short)
        }
        World::Bandit(b) => {
            if !(config.eta > 0.0) {
                return Err(Error::InvalidConfig(
                    "bandit KL training needs eta > 0".into(),
                ));
            }
            let run = ascend_bandit_kl(
                &b.env,
                weights,
                config.eta,
                &b.reference,
                steps,
                config.learning_rate,
                false,
            )?;
            Ok(run.policy.logits().clone())
        }
    }
}

/// `n` backbone models, model `i` trained on column `i` of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSet {
    pub matrix: CombinationMatrix,
    pub models: Vec<ParamVector>,
    pub reference: ParamVector,
    pub config: TrainerConfig,
}

impl BackboneSet {
    pub fn new(
        matrix: CombinationMatrix,
        models: Vec<ParamVector>,
        reference: ParamVector,
        config: TrainerConfig,
    ) -> Result<Self> {
        if models.len() != matrix.n() {
            return Err(Error::InvalidConfig(format!(
                "{} models for a {}x{} matrix",
                models.len(),
                matrix.n(),
                matrix.n()
            )));
        }
        if let Some(m) = models.iter().find(|m| m.dim() != reference.dim()) {
            return Err(crate::types::TypesError::DimensionMismatch {
                expected: reference.dim(),
                got: m.dim(),
            }
            .into());
        }
        Ok(Self {
            matrix,
            models,
            reference,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: BackboneSet = serde_json::from_str(&text)?;
        BackboneSet::new(set.matrix, set.models, set.reference, set.config)
    }
}

fn check_world_matrix(matrix: &CombinationMatrix, world: &World) -> Result<()> {
    if matrix.n() != world.objectives() {
        return Err(Error::InvalidConfig(format!(
            "{}x{} matrix for {} objectives",
            matrix.n(),
            matrix.n(),
            world.objectives()
        )));
    }
    Ok(())
}

pub fn train_backbones(
    matrix: &CombinationMatrix,
    world: &World,
    config: &TrainerConfig,
) -> Result<BackboneSet> {
    check_world_matrix(matrix, world)?;
    let models = (0..matrix.n())
        .into_par_iter()
        .map(|i| train_weighted(world, &matrix.column(i), config))
        .collect::<Result<Vec<_>>>()?;
    BackboneSet::new(
        matrix.clone(),
        models,
        world.reference().clone(),
        config.clone(),
    )
}

pub fn train_backbones_short(
    matrix: &CombinationMatrix,
    world: &World,
    config: &TrainerConfig,
) -> Result<BackboneSet> {
    check_world_matrix(matrix, world)?;
    let models = (0..matrix.n())
        .into_par_iter()
        .map(|i| train_weighted_short(world, &matrix.column(i), config))
        .collect::<Result<Vec<_>>>()?;
    BackboneSet::new(
        matrix.clone(),
        models,
        world.reference().clone(),
        config.clone(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub value: f64,
    pub hypervolume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSelection {
    pub beta: f64,
    pub hv_reference: Vec<f64>,
    pub scores: Vec<CandidateScore>,
}

/// Short-budget screening of β candidates by validation hypervolume.
///
/// `hv_reference = None` applies the automatic rule over the union of all
/// candidate fronts. Ties go to the larger β.
pub fn select_beta_scored(
    candidates: &[f64],
    world: &World,
    config: &TrainerConfig,
    validation_prefs: &[PreferenceVector],
    hv_reference: Option<&[f64]>,
) -> Result<BetaSelection> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let n = world.objectives();
    let fronts = candidates
        .par_iter()
        .map(|&beta| {
            let matrix = build_circulant(n, beta)?;
            let set = train_backbones_short(&matrix, world, config)?;
            validation_prefs
                .iter()
                .map(|mu| Ok(world.evaluate(&merge(&set, mu)?)?))
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = match hv_reference {
        Some(r) => r.to_vec(),
        None => auto_reference(fronts.iter().map(Vec::as_slice))?,
    };
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for (&beta, front) in candidates.iter().zip(&fronts) {
        let hv = hypervolume(front, &reference)?;
        scores.push(CandidateScore {
            value: beta,
            hypervolume: hv,
        });
        best = match best {
            Some((b, h)) if h > hv || (h == hv && b > beta) => Some((b, h)),
            _ => Some((beta, hv)),
        };
    }
    Ok(BetaSelection {
        beta: best.map(|(b, _)| b).unwrap_or(candidates[0]),
        hv_reference: reference,
        scores,
    })
}

pub fn select_beta(
    candidates: &[f64],
    world: &World,
    config: &TrainerConfig,
    validation_prefs: &[PreferenceVector],
    hv_reference: Option<&[f64]>,
) -> Result<f64> {
    Ok(select_beta_scored(candidates, world, config, validation_prefs, hv_reference)?.beta)
}

/// Per-context total-variation distances between two policies' induced
/// distributions, for convenience in diagnostics.
pub fn policy_tv(a: &SoftmaxPolicy, b: &SoftmaxPolicy) -> Vec<f64> {
    a.total_variation(b)
}

/// Probability vector of the Gibbs optimum for one context; exposed for tests.
pub fn gibbs_row(reference_logits: &[f64], rewards: &[f64], eta: f64) -> Vec<f64> {
    let raw: Vec<f64> = log_softmax(reference_logits)
        .iter()
        .zip(rewards)
        .map(|(lr, r)| lr + r / eta)
        .collect();
    softmax(&raw)
}
