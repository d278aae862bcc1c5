//! Closed forms for two isotropic quadratic rewards `r_i = c_i − k_i‖θ−θ_i‖²`:
//! the scalarized maximizer, the backbone maximizers, the merge error
//! `E(β,μ) = ‖θ̄ᵇᵒⁿᵉ − θ*‖²`, and the interval of preferences on which Bone
//! Soup provably beats the soup merge. Also reproduces the anisotropic
//! two-objective worked example.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{CombinationMatrix, MatrixError};
use crate::merging::merge;
use crate::rewards::{QuadraticReward, World};
use crate::trainer::{train_backbones, train_quadratic_closed_form, TrainerConfig};
use crate::types::{linear_combination, ParamVector, PreferenceVector};

/// Endpoint exclusion when sampling the theorem interval.
pub const INTERVAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotropicPair {
    k1: f64,
    k2: f64,
    theta1: ParamVector,
    theta2: ParamVector,
    peaks: [f64; 2],
}

impl IsotropicPair {
    pub fn new(
        k1: f64,
        k2: f64,
        theta1: ParamVector,
        theta2: ParamVector,
        peaks: [f64; 2],
    ) -> Result<Self> {
        if !(k1 > 0.0 && k2 > 0.0 && k1.is_finite() && k2.is_finite()) {
            return Err(Error::InvalidConfig("curvatures must be positive".into()));
        }
        if (k1 - k2).abs() <= 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "curvatures must be distinct, got {k1} and {k2}"
            )));
        }
        theta1.same_dim(&theta2)?;
        if peaks.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("peaks must be finite".into()));
        }
        Ok(Self {
            k1,
            k2,
            theta1,
            theta2,
            peaks,
        })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn theta1(&self) -> &ParamVector {
        &self.theta1
    }

    pub fn theta2(&self) -> &ParamVector {
        &self.theta2
    }

    pub fn dim(&self) -> usize {
        self.theta1.dim()
    }

    pub fn rewards(&self) -> Result<Vec<QuadraticReward>> {
        Ok(vec![
            QuadraticReward::isotropic(self.peaks[0], self.theta1.clone(), self.k1)?,
            QuadraticReward::isotropic(self.peaks[1], self.theta2.clone(), self.k2)?,
        ])
    }

    /// Quadratic world with reference at the origin.
    pub fn to_world(&self) -> Result<World> {
        Ok(World::quadratic(
            self.rewards()?,
            ParamVector::zeros(self.dim()),
        )?)
    }

    /// `g_μ(θ) = μ r₁(θ) + (1−μ) r₂(θ)`.
    pub fn testing_reward(&self, mu: f64, point: &ParamVector) -> Result<f64> {
        let r1 = self.peaks[0] - self.k1 * point.distance_sq(&self.theta1)?;
        let r2 = self.peaks[1] - self.k2 * point.distance_sq(&self.theta2)?;
        Ok(mu * r1 + (1.0 - mu) * r2)
    }

    fn gap_sq(&self) -> f64 {
        self.theta1.distance_sq(&self.theta2).unwrap_or(0.0)
    }
}

/// `(a·θ₁ + b·θ₂)/(a + b)`.
fn weighted_point(pair: &IsotropicPair, a: f64, b: f64) -> ParamVector {
    let s = a + b;
    linear_combination(&[pair.theta1.clone(), pair.theta2.clone()], &[a / s, b / s])
        .expect("pair maximizers share a dimension")
}

/// Maximizer of `μ r₁ + (1−μ) r₂`.
pub fn oracle_maximizer(pair: &IsotropicPair, mu: f64) -> ParamVector {
    weighted_point(pair, mu * pair.k1, (1.0 - mu) * pair.k2)
}

fn check_beta_closed(beta: f64) -> Result<()> {
    if !(beta > 0.5 && beta <= 1.0) {
        return Err(MatrixError::BetaOutOfRange(beta).into());
    }
    Ok(())
}

/// Maximizers of `β r₁ + (1−β) r₂` and `(1−β) r₁ + β r₂`. `β = 1` gives the
/// individual maximizers.
pub fn bone_solutions(pair: &IsotropicPair, beta: f64) -> Result<(ParamVector, ParamVector)> {
    check_beta_closed(beta)?;
    Ok((
        weighted_point(pair, beta * pair.k1, (1.0 - beta) * pair.k2),
        weighted_point(pair, (1.0 - beta) * pair.k1, beta * pair.k2),
    ))
}

/// First merging coefficient for `B(2, β)` and preference `(μ, 1−μ)`.
pub fn coefficient(beta: f64, mu: f64) -> f64 {
    (beta + mu - 1.0) / (2.0 * beta - 1.0)
}

/// `λ θ₁ᵇᵒⁿᵉ + (1−λ) θ₂ᵇᵒⁿᵉ`.
pub fn bone_merged(pair: &IsotropicPair, beta: f64, mu: f64) -> Result<ParamVector> {
    let (b1, b2) = bone_solutions(pair, beta)?;
    let lambda = coefficient(beta, mu);
    Ok(linear_combination(&[b1, b2], &[lambda, 1.0 - lambda])?)
}

/// Closed-form `E(β, μ)`; `β = 1` is the soup merge.
pub fn error_function(pair: &IsotropicPair, beta: f64, mu: f64) -> Result<f64> {
    check_beta_closed(beta)?;
    let (k1, k2) = (pair.k1, pair.k2);
    let num = k1 * k2 * (k1 - k2) * (beta - mu) * (beta + mu - 1.0);
    let den = (mu * k1 + (1.0 - mu) * k2)
        * (beta * k1 + (1.0 - beta) * k2)
        * ((1.0 - beta) * k1 + beta * k2);
    Ok((num / den).powi(2) * pair.gap_sq())
}

/// `E(1, μ)` in its reduced form.
pub fn soup_error(pair: &IsotropicPair, mu: f64) -> f64 {
    let (k1, k2) = (pair.k1, pair.k2);
    ((k1 - k2) * (1.0 - mu) * mu / (mu * k1 + (1.0 - mu) * k2)).powi(2) * pair.gap_sq()
}

/// `E(β, μ)` from the constructed points.
pub fn error_function_constructive(pair: &IsotropicPair, beta: f64, mu: f64) -> Result<f64> {
    Ok(bone_merged(pair, beta, mu)?.distance_sq(&oracle_maximizer(pair, mu))?)
}

/// `((1−L)/2, (1+L)/2)` with `L = √(2β²−2β+1)`.
pub fn theorem_interval(beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(MatrixError::BetaOutOfRange(beta).into());
    }
    let length = (2.0 * beta * beta - 2.0 * beta + 1.0).sqrt();
    Ok(((1.0 - length) / 2.0, (1.0 + length) / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutsideSummary {
    pub samples: usize,
    /// Points outside the interval where Bone Soup still strictly wins.
    pub bone_better: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
    pub interval: (f64, f64),
    pub interval_length: f64,
    pub grid_size: usize,
    pub violations: usize,
    /// Smallest `g_μ(θ̄ᵇᵒⁿᵉ) − g_μ(θ̄)` over the grid.
    pub worst_margin: f64,
    pub worst_mu: f64,
    /// Largest disagreement between constructive and closed-form margins.
    pub max_closed_form_gap: f64,
    pub outside: OutsideSummary,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// `g_μ(θ̄ᵇᵒⁿᵉ) − g_μ(θ̄)` from constructed points, written as
/// `c₂(E_soup − E_bone)` with `c₂ = μk₁ + (1−μ)k₂` to avoid cancellation.
fn margin(pair: &IsotropicPair, beta: f64, mu: f64) -> Result<(f64, f64)> {
    let c2 = mu * pair.k1 + (1.0 - mu) * pair.k2;
    let constructive = c2
        * (error_function_constructive(pair, 1.0, mu)?
            - error_function_constructive(pair, beta, mu)?);
    let closed = c2 * (soup_error(pair, mu) - error_function(pair, beta, mu)?);
    Ok((constructive, closed))
}

/// Samples `grid_size` evenly spaced preferences inside the theorem interval,
/// `INTERVAL_MARGIN` away from both endpoints, and counts points where Bone
/// Soup fails to strictly beat the soup merge.
pub fn verify_theorem(
    pair: &IsotropicPair,
    beta: f64,
    grid_size: usize,
) -> Result<VerificationReport> {
    if grid_size < 10 {
        return Err(Error::InvalidConfig(format!(
            "grid_size must be >= 10, got {grid_size}"
        )));
    }
    let (low, high) = theorem_interval(beta)?;
    let (a, b) = (low + INTERVAL_MARGIN, high - INTERVAL_MARGIN);
    let step = (b - a) / (grid_size - 1) as f64;
    let inside = (0..grid_size)
        .into_par_iter()
        .map(|i| {
            let mu = a + step * i as f64;
            margin(pair, beta, mu).map(|m| (mu, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut violations = 0;
    let mut worst = (f64::INFINITY, a);
    let mut gap: f64 = 0.0;
    for &(mu, (m, closed)) in &inside {
        // scale the cross-check by the soup error so it is relative
        let scale = 1.0 + soup_error(pair, mu) * (mu * pair.k1 + (1.0 - mu) * pair.k2);
        gap = gap.max((m - closed).abs() / scale);
        if !(m > 0.0) {
            violations += 1;
        }
        if m < worst.0 {
            worst = (m, mu);
        }
    }
    // informational sweep of [0, 1] outside the interval
    let mut outside = OutsideSummary {
        samples: 0,
        bone_better: 0,
    };
    for i in 0..=grid_size {
        let mu = i as f64 / grid_size as f64;
        if mu > low && mu < high {
            continue;
        }
        outside.samples += 1;
        if margin(pair, beta, mu)?.0 > 0.0 {
            outside.bone_better += 1;
        }
    }
    Ok(VerificationReport {
        beta,
        k1: pair.k1,
        k2: pair.k2,
        interval: (low, high),
        interval_length: high - low,
        grid_size,
        violations,
        worst_margin: worst.0,
        worst_mu: worst.1,
        max_closed_form_gap: gap,
        outside,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example21Report {
    pub preference: [f64; 2],
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub soup_merged: Vec<f64>,
    pub bone1: Vec<f64>,
    pub bone2: Vec<f64>,
    pub bone_merged: Vec<f64>,
    pub soup_distance: f64,
    pub bone_distance: f64,
    pub soup_rewards: Vec<f64>,
    pub bone_rewards: Vec<f64>,
    pub oracle_rewards: Vec<f64>,
    pub soup_testing_reward: f64,
    pub bone_testing_reward: f64,
    pub oracle_testing_reward: f64,
    pub bone_closer: bool,
}

/// The worked example with `r₁ = −(x−1)²−(y−1)²`, `r₂ = −(x−3)²−4(y+1)²`,
/// `μ = (0.5, 0.5)` and backbone weights `(0.4, 0.6)`, `(0.6, 0.4)`, computed
/// through the trainer and merger.
pub fn example21() -> Result<Example21Report> {
    let world = World::example21();
    let World::Quadratic(q) = &world else {
        unreachable!("example world is quadratic")
    };
    let exact = TrainerConfig {
        eta: 0.0,
        ..TrainerConfig::default()
    };
    let mu = PreferenceVector::new(vec![0.5, 0.5])?;
    let theta_star = train_quadratic_closed_form(&q.rewards, mu.as_slice(), 0.0, &q.reference)?;

    let soup = train_backbones(&CombinationMatrix::identity(2)?, &world, &exact)?;
    let soup_merged = merge(&soup, &mu)?;

    let b = CombinationMatrix::from_columns(&[vec![0.4, 0.6], vec![0.6, 0.4]])?;
    let bones = train_backbones(&b, &world, &exact)?;
    let bone_merged = merge(&bones, &mu)?;

    let soup_rewards = world.evaluate(&soup_merged)?;
    let bone_rewards = world.evaluate(&bone_merged)?;
    let oracle_rewards = world.evaluate(&theta_star)?;
    let soup_distance = soup_merged.distance_sq(&theta_star)?.sqrt();
    let bone_distance = bone_merged.distance_sq(&theta_star)?.sqrt();
    Ok(Example21Report {
        preference: [0.5, 0.5],
        theta1: soup.models[0].as_slice().to_vec(),
        theta2: soup.models[1].as_slice().to_vec(),
        theta_star: theta_star.into_inner(),
        soup_merged: soup_merged.into_inner(),
        bone1: bones.models[0].as_slice().to_vec(),
        bone2: bones.models[1].as_slice().to_vec(),
        bone_merged: bone_merged.into_inner(),
        soup_distance,
        bone_distance,
        soup_testing_reward: mu.dot(&soup_rewards)?,
        bone_testing_reward: mu.dot(&bone_rewards)?,
        oracle_testing_reward: mu.dot(&oracle_rewards)?,
        soup_rewards,
        bone_rewards,
        oracle_rewards,
        bone_closer: bone_distance < soup_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::build_circulant;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn line_pair() -> IsotropicPair {
        IsotropicPair::new(1.0, 2.0, pv(&[0.0]), pv(&[1.0]), [0.0, 0.0]).unwrap()
    }

    #[test]
    fn pair_validation() {
        assert!(IsotropicPair::new(1.0, 1.0, pv(&[0.0]), pv(&[1.0]), [0.0; 2]).is_err());
        assert!(IsotropicPair::new(-1.0, 1.0, pv(&[0.0]), pv(&[1.0]), [0.0; 2]).is_err());
        assert!(IsotropicPair::new(1.0, 2.0, pv(&[0.0]), pv(&[1.0, 2.0]), [0.0; 2]).is_err());
    }

    #[test]
    fn oracle_examples() {
        let p = line_pair();
        assert_eq!(oracle_maximizer(&p, 1.0), pv(&[0.0]));
        assert!((oracle_maximizer(&p, 0.5).as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        let r = example21().unwrap();
        assert!((r.theta_star[0] - 2.0).abs() < 1e-12 && (r.theta_star[1] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn oracle_zeroes_the_gradient() {
        let p =
            IsotropicPair::new(0.7, 3.1, pv(&[1.0, -2.0]), pv(&[-0.5, 4.0]), [1.0, -1.0]).unwrap();
        let rewards = p.rewards().unwrap();
        for mu in [0.0, 0.2, 0.5, 0.9] {
            let t = oracle_maximizer(&p, mu);
            let g1 = rewards[0].gradient(&t).unwrap();
            let g2 = rewards[1].gradient(&t).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                assert!((mu * a + (1.0 - mu) * b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bone_solution_examples() {
        let p = line_pair();
        let (b1, b2) = bone_solutions(&p, 0.75).unwrap();
        assert!((b1.as_slice()[0] - 0.4).abs() < 1e-15);
        assert!((b2.as_slice()[0] - 6.0 / 7.0).abs() < 1e-15);
        let (s1, s2) = bone_solutions(&p, 1.0).unwrap();
        assert_eq!((s1, s2), (pv(&[0.0]), pv(&[1.0])));
        let (n1, n2) = bone_solutions(&p, 1.0 - 1e-12).unwrap();
        assert!(n1.as_slice()[0].abs() < 1e-11 && (n2.as_slice()[0] - 1.0).abs() < 1e-11);

        let rewards = p.rewards().unwrap();
        let t1 = train_quadratic_closed_form(&rewards, &[0.75, 0.25], 0.0, &pv(&[0.0])).unwrap();
        assert!(t1.max_abs_diff(&b1).unwrap() < 1e-14);
        assert!(bone_solutions(&p, 0.5).is_err());
    }

    #[test]
    fn error_function_examples() {
        let p = line_pair();
        assert_eq!(error_function(&p, 0.7, 0.7).unwrap(), 0.0);
        assert!(error_function(&p, 0.7, 0.3).unwrap().abs() < 1e-30);
        assert!((error_function(&p, 1.0, 0.5).unwrap() - 1.0 / 36.0).abs() < 1e-15);
        assert!((soup_error(&p, 0.5) - 1.0 / 36.0).abs() < 1e-15);
    }

    #[test]
    fn interval_examples() {
        let (l, h) = theorem_interval(0.7).unwrap();
        assert!((h - l - 0.58f64.sqrt()).abs() < 1e-12);
        assert!((l - 0.11921).abs() < 1e-5 && (h - 0.88079).abs() < 1e-5);
        let (l, h) = theorem_interval(0.5 + 1e-9).unwrap();
        assert!((h - l - 0.5f64.sqrt()).abs() < 1e-8);
        let (l, h) = theorem_interval(1.0 - 1e-12).unwrap();
        assert!(l.abs() < 1e-9 && (h - 1.0).abs() < 1e-9);
        for bad in [0.5, 1.0, 0.3, f64::NAN] {
            assert!(matches!(
                theorem_interval(bad),
                Err(Error::Matrix(MatrixError::BetaOutOfRange(_)))
            ));
        }
    }

    #[test]
    fn verify_examples() {
        let p = IsotropicPair::new(0.4, 6.0, pv(&[-3.0, 2.0]), pv(&[4.0, -1.0]), [0.0; 2]).unwrap();
        let report = verify_theorem(&p, 0.7, 1000).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_closed_form_gap < 1e-9);
        assert!(verify_theorem(&p, 0.7, 9).is_err());
        // exact hit at μ = β
        assert_eq!(error_function(&p, 0.7, 0.7).unwrap(), 0.0);
        assert!(soup_error(&p, 0.7) > 0.0);
    }

    #[test]
    fn example21_values() {
        let r = example21().unwrap();
        let close =
            |a: &[f64], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
        assert!(close(&r.theta1, [1.0, 1.0]));
        assert!(close(&r.theta2, [3.0, -1.0]));
        assert!(close(&r.soup_merged, [2.0, 0.0]));
        assert!(close(&r.bone1, [2.2, -5.0 / 7.0]));
        assert!(close(&r.bone2, [1.8, -5.0 / 11.0]));
        assert!(close(&r.bone_merged, [2.0, -45.0 / 77.0]));
        assert!(r.bone_closer);
        assert!((r.bone_testing_reward + 2.6006).abs() < 1e-4);
        assert_eq!(r.soup_testing_reward, -3.5);
        assert!((r.oracle_testing_reward + 2.6).abs() < 1e-12);
    }

    fn pair_strategy(dim: usize) -> impl Strategy<Value = IsotropicPair> {
        (
            0.1f64..10.0,
            0.1f64..10.0,
            prop::collection::vec(-5.0f64..5.0, dim),
            prop::collection::vec(-5.0f64..5.0, dim),
        )
            .prop_filter("distinct curvatures", |(k1, k2, _, _)| {
                (k1 - k2).abs() > 1e-3
            })
            .prop_map(|(k1, k2, t1, t2)| {
                IsotropicPair::new(k1, k2, pv(&t1), pv(&t2), [0.0; 2]).unwrap()
            })
    }

    proptest! {
        #[test]
        fn constructive_merge_matches_formula(p in (1usize..=4).prop_flat_map(pair_strategy),
                                              beta in 0.55f64..0.95, mu in 0.0f64..1.0) {
            let world = p.to_world().unwrap();
            let exact = TrainerConfig { eta: 0.0, ..TrainerConfig::default() };
            let bones = train_backbones(&build_circulant(2, beta).unwrap(), &world, &exact).unwrap();
            let pref = PreferenceVector::new(vec![mu, 1.0 - mu]).unwrap();
            let lambda = crate::merging::solve_coefficients(&bones.matrix, &pref).unwrap();
            prop_assert!((lambda.as_slice()[0] - coefficient(beta, mu)).abs() < 1e-12);
            let merged = merge(&bones, &pref).unwrap();
            let formula = bone_merged(&p, beta, mu).unwrap();
            prop_assert!(merged.max_abs_diff(&formula).unwrap() < 1e-9);
        }

        #[test]
        fn error_function_matches_construction(p in pair_strategy(2), beta in 0.55f64..1.0, mu in 0.0f64..1.0) {
            let closed = error_function(&p, beta, mu).unwrap();
            let built = error_function_constructive(&p, beta, mu).unwrap();
            prop_assert!(closed >= 0.0);
            prop_assert!((closed - built).abs() < 1e-10 * (1.0 + closed));
        }

        #[test]
        fn error_vanishes_only_at_roots(p in pair_strategy(2), beta in 0.55f64..0.95, mu in 0.0f64..1.0) {
            prop_assume!(p.gap_sq() > 1e-6);
            prop_assume!((mu - beta).abs() > 1e-6 && (mu - (1.0 - beta)).abs() > 1e-6);
            prop_assert!(error_function(&p, beta, mu).unwrap() > 0.0);
            prop_assert_eq!(error_function(&p, beta, 1.0 - beta).unwrap(), 0.0);
        }

        #[test]
        fn interval_length_monotone(a in 0.5001f64..0.9999, b in 0.5001f64..0.9999) {
            prop_assume!(a < b);
            let (la, ha) = theorem_interval(a).unwrap();
            let (lb, hb) = theorem_interval(b).unwrap();
            prop_assert!(hb - lb > ha - la);
            prop_assert!(ha - la >= 0.5f64.sqrt());
        }

        #[test]
        fn scalarization_bound(k1 in 0.1f64..10.0, k2 in 0.1f64..10.0, beta in 0.5f64..1.0) {
            let lhs = (beta * k1 + (1.0 - beta) * k2) * ((1.0 - beta) * k1 + beta * k2);
            prop_assert!(lhs >= k1 * k2 * (1.0 - 1e-12));
        }
    }
}
