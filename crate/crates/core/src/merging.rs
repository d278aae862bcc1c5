//! Preference-to-coefficient mapping `λ = B⁻¹μ`, parameter merging, and
//! extrapolation away from the reference model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CombinationMatrix;
use crate::metrics::{auto_reference, hypervolume};
use crate::rewards::World;
use crate::trainer::BackboneSet;
use crate::types::{
    linear_combination, MergeCoefficients, ParamVector, PreferenceVector, TypesError,
};

pub const DEFAULT_ALPHA_CANDIDATES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrapolationConfig {
    pub alpha: f64,
    pub candidates: Vec<f64>,
}

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            candidates: DEFAULT_ALPHA_CANDIDATES.to_vec(),
        }
    }
}

impl ExtrapolationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig("alpha must be > 0".into()));
        }
        if self.candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if self.candidates.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidConfig("alpha candidates must be > 0".into()));
        }
        Ok(())
    }
}

/// How a preference becomes merging coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// `λ = B⁻¹μ`.
    Solve,
    /// `λ = μ`, ignoring `B`.
    Preference,
}

/// Solves `Bλ = μ`. Components of λ may be negative.
pub fn solve_coefficients(
    matrix: &CombinationMatrix,
    preference: &PreferenceVector,
) -> Result<MergeCoefficients> {
    Ok(MergeCoefficients::new(matrix.solve(preference.as_slice())?))
}

pub fn coefficients(
    rule: MergeRule,
    matrix: &CombinationMatrix,
    preference: &PreferenceVector,
) -> Result<MergeCoefficients> {
    match rule {
        MergeRule::Solve => solve_coefficients(matrix, preference),
        MergeRule::Preference => {
            if preference.dim() != matrix.n() {
                return Err(TypesError::DimensionMismatch {
                    expected: matrix.n(),
                    got: preference.dim(),
                }
                .into());
            }
            Ok(MergeCoefficients::new(preference.as_slice().to_vec()))
        }
    }
}

pub fn merge_with_coefficients(
    backbones: &BackboneSet,
    coefficients: &MergeCoefficients,
) -> Result<ParamVector> {
    Ok(linear_combination(
        &backbones.models,
        coefficients.as_slice(),
    )?)
}

/// `Σ λᵢ θᵢ` with `λ = B⁻¹μ`.
pub fn merge(backbones: &BackboneSet, preference: &PreferenceVector) -> Result<ParamVector> {
    merge_with_coefficients(
        backbones,
        &solve_coefficients(&backbones.matrix, preference)?,
    )
}

/// `Σ μᵢ θᵢ` over the backbones.
pub fn merge_aba(backbones: &BackboneSet, preference: &PreferenceVector) -> Result<ParamVector> {
    merge_with_coefficients(
        backbones,
        &coefficients(MergeRule::Preference, &backbones.matrix, preference)?,
    )
}

pub fn merge_by_rule(
    backbones: &BackboneSet,
    rule: MergeRule,
    preference: &PreferenceVector,
) -> Result<ParamVector> {
    merge_with_coefficients(
        backbones,
        &coefficients(rule, &backbones.matrix, preference)?,
    )
}

/// `merged + α(merged − reference)`.
pub fn extrapolate(
    merged: &ParamVector,
    reference: &ParamVector,
    alpha: f64,
) -> Result<ParamVector> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if merged.dim() != reference.dim() {
        return Err(TypesError::DimensionMismatch {
            expected: merged.dim(),
            got: reference.dim(),
        }
        .into());
    }
    let out = merged
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(m, r)| m + alpha * (m - r))
        .collect();
    Ok(ParamVector::new(out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub hv_reference: Vec<f64>,
    pub scores: Vec<crate::trainer::CandidateScore>,
}

/// Front of extrapolated merges over `prefs`.
pub fn extrapolated_front(
    world: &World,
    backbones: &BackboneSet,
    rule: MergeRule,
    prefs: &[PreferenceVector],
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    prefs
        .iter()
        .map(|mu| {
            let merged = merge_by_rule(backbones, rule, mu)?;
            Ok(world.evaluate(&extrapolate(&merged, &backbones.reference, alpha)?)?)
        })
        .collect()
}

/// Validation-hypervolume choice of α, one value for the whole experiment.
/// `hv_reference = None` uses the automatic rule over the union of candidate
/// fronts. Ties go to the smaller α.
pub fn select_alpha_scored(
    config: &ExtrapolationConfig,
    world: &World,
    backbones: &BackboneSet,
    rule: MergeRule,
    validation_prefs: &[PreferenceVector],
    hv_reference: Option<&[f64]>,
) -> Result<AlphaSelection> {
    if config.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let fronts = config
        .candidates
        .par_iter()
        .map(|&alpha| extrapolated_front(world, backbones, rule, validation_prefs, alpha))
        .collect::<Result<Vec<_>>>()?;
    let reference = match hv_reference {
        Some(r) => r.to_vec(),
        None => auto_reference(fronts.iter().map(Vec::as_slice))?,
    };
    let mut scores = Vec::with_capacity(fronts.len());
    let mut best: Option<(f64, f64)> = None;
    for (&alpha, front) in config.candidates.iter().zip(&fronts) {
        let hv = hypervolume(front, &reference)?;
        scores.push(crate::trainer::CandidateScore {
            value: alpha,
            hypervolume: hv,
        });
        best = match best {
            Some((a, h)) if h > hv || (h == hv && a < alpha) => Some((a, h)),
            _ => Some((alpha, hv)),
        };
    }
    Ok(AlphaSelection {
        alpha: best.map(|(a, _)| a).unwrap_or(config.candidates[0]),
        hv_reference: reference,
        scores,
    })
}

pub fn select_alpha(
    config: &ExtrapolationConfig,
    world: &World,
    backbones: &BackboneSet,
    validation_prefs: &[PreferenceVector],
    hv_reference: Option<&[f64]>,
) -> Result<f64> {
    Ok(select_alpha_scored(
        config,
        world,
        backbones,
        MergeRule::Solve,
        validation_prefs,
        hv_reference,
    )?
    .alpha)
}
