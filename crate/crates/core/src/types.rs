//! Shared value types: simplex preferences, flat parameter vectors, merge
//! coefficients, and the method taxonomy used to label fronts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for "sums to one" checks on simplex points.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypesError {
    #[error("preference needs at least 2 components, got {0}")]
    TooShort(usize),
    #[error("component {index} is negative ({value})")]
    NegativeComponent { index: usize, value: f64 },
    #[error("component {index} is not finite")]
    NonFinite { index: usize },
    #[error("components sum to {sum}, expected 1")]
    SumNotOne { sum: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot combine an empty list of parameter vectors")]
    Empty,
    #[error("invalid method tag `{0}`")]
    BadMethod(String),
}

/// A point on the probability simplex. Never renormalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PreferenceVector(Vec<f64>);

impl PreferenceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TypesError> {
        if values.len() < 2 {
            return Err(TypesError::TooShort(values.len()));
        }
        check_simplex(&values)?;
        Ok(Self(values))
    }

    /// Builds `numerators / denominator` exactly component by component.
    pub fn from_numerators(numerators: &[u32], denominator: u32) -> Result<Self, TypesError> {
        let values = numerators
            .iter()
            .map(|&k| f64::from(k) / f64::from(denominator))
            .collect();
        Self::new(values)
    }

    /// Standard basis vector `e_i` of length `n`.
    pub fn basis(n: usize, i: usize) -> Result<Self, TypesError> {
        let mut values = vec![0.0; n];
        if i >= n {
            return Err(TypesError::DimensionMismatch {
                expected: n,
                got: i + 1,
            });
        }
        values[i] = 1.0;
        Self::new(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `μᵀ r`.
    pub fn dot(&self, rewards: &[f64]) -> Result<f64, TypesError> {
        if rewards.len() != self.0.len() {
            return Err(TypesError::DimensionMismatch {
                expected: self.0.len(),
                got: rewards.len(),
            });
        }
        Ok(self.0.iter().zip(rewards).map(|(m, r)| m * r).sum())
    }
}

impl TryFrom<Vec<f64>> for PreferenceVector {
    type Error = TypesError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<PreferenceVector> for Vec<f64> {
    fn from(p: PreferenceVector) -> Self {
        p.0
    }
}

/// Checks non-negativity, finiteness and unit sum (no length requirement).
pub(crate) fn check_simplex(values: &[f64]) -> Result<(), TypesError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(TypesError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(TypesError::NegativeComponent { index, value });
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(TypesError::SumNotOne { sum });
    }
    Ok(())
}

/// A flat real parameter vector, the desk-scale stand-in for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TypesError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TypesError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn distance_sq(&self, other: &ParamVector) -> Result<f64, TypesError> {
        self.same_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64, TypesError> {
        self.same_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn same_dim(&self, other: &ParamVector) -> Result<(), TypesError> {
        if self.0.len() != other.0.len() {
            return Err(TypesError::DimensionMismatch {
                expected: self.0.len(),
                got: other.0.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = TypesError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// Merging coefficients λ. Components may be negative; they sum to one when
/// derived from a column-stochastic matrix and a simplex preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MergeCoefficients(Vec<f64>);

impl MergeCoefficients {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `Σᵢ coeffsᵢ · paramsᵢ`.
pub fn linear_combination(
    params: &[ParamVector],
    coeffs: &[f64],
) -> Result<ParamVector, TypesError> {
    let first = params.first().ok_or(TypesError::Empty)?;
    if coeffs.len() != params.len() {
        return Err(TypesError::DimensionMismatch {
            expected: params.len(),
            got: coeffs.len(),
        });
    }
    let mut out = vec![0.0; first.dim()];
    for (p, &c) in params.iter().zip(coeffs) {
        first.same_dim(p)?;
        for (o, v) in out.iter_mut().zip(p.as_slice()) {
            *o += c * v;
        }
    }
    ParamVector::new(out)
}

/// Which construction produced a front.
///
/// `beta`/`alpha` set to `None` mean "select on the validation grid"; they are
/// resolved to concrete values before any front rows are produced. The string
/// form (`bone_soup(0.6)`, `extrapolated(0.3, rewarded_soup)`, ...) is used in
/// configs and CSV files.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodTag {
    BoneSoup {
        beta: Option<f64>,
    },
    RewardedSoup,
    MorlhfOracle,
    Aba {
        beta: Option<f64>,
    },
    RandomMatrix {
        id: usize,
    },
    Extrapolated {
        alpha: Option<f64>,
        inner: Box<MethodTag>,
    },
}

impl MethodTag {
    pub fn bone_soup(beta: f64) -> Self {
        MethodTag::BoneSoup { beta: Some(beta) }
    }

    pub fn aba(beta: f64) -> Self {
        MethodTag::Aba { beta: Some(beta) }
    }

    pub fn extrapolated(alpha: f64, inner: MethodTag) -> Self {
        MethodTag::Extrapolated {
            alpha: Some(alpha),
            inner: Box::new(inner),
        }
    }

    /// β of the Bone backbones this method uses, looking through extrapolation.
    pub fn beta(&self) -> Option<f64> {
        match self {
            MethodTag::BoneSoup { beta } | MethodTag::Aba { beta } => *beta,
            MethodTag::Extrapolated { inner, .. } => inner.beta(),
            _ => None,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            MethodTag::Extrapolated { alpha, .. } => *alpha,
            _ => None,
        }
    }

    /// True once every `auto` parameter has been replaced by a value.
    pub fn is_resolved(&self) -> bool {
        match self {
            MethodTag::BoneSoup { beta } | MethodTag::Aba { beta } => beta.is_some(),
            MethodTag::Extrapolated { alpha, inner } => alpha.is_some() && inner.is_resolved(),
            _ => true,
        }
    }

    /// Checks the parameter ranges: β ∈ (0.5, 1), α > 0, catalog ids 1..=8,
    /// and that extrapolation wraps a merging method.
    pub fn validate(&self) -> Result<(), TypesError> {
        let bad = || TypesError::BadMethod(self.to_string());
        match self {
            MethodTag::BoneSoup { beta } | MethodTag::Aba { beta } => match beta {
                Some(b) if !(*b > 0.5 && *b < 1.0) => Err(bad()),
                _ => Ok(()),
            },
            MethodTag::RandomMatrix { id } if !(1..=8).contains(id) => Err(bad()),
            MethodTag::Extrapolated { alpha, inner } => {
                if matches!(alpha, Some(a) if !(*a > 0.0 && a.is_finite())) {
                    return Err(bad());
                }
                match inner.as_ref() {
                    MethodTag::MorlhfOracle | MethodTag::Extrapolated { .. } => Err(bad()),
                    other => other.validate(),
                }
            }
            _ => Ok(()),
        }
    }
}

fn fmt_param(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodTag::BoneSoup { beta } => write!(f, "bone_soup({})", fmt_param(*beta)),
            MethodTag::RewardedSoup => write!(f, "rewarded_soup"),
            MethodTag::MorlhfOracle => write!(f, "morlhf_oracle"),
            MethodTag::Aba { beta } => write!(f, "aba({})", fmt_param(*beta)),
            MethodTag::RandomMatrix { id } => write!(f, "random_matrix({id})"),
            MethodTag::Extrapolated { alpha, inner } => {
                write!(f, "extrapolated({}, {inner})", fmt_param(*alpha))
            }
        }
    }
}

impl FromStr for MethodTag {
    type Err = TypesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TypesError::BadMethod(s.to_string());
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                if !s.ends_with(')') {
                    return Err(bad());
                }
                (&s[..open], Some(&s[open + 1..s.len() - 1]))
            }
            None => (s, None),
        };
        let param = |a: &str| -> Result<Option<f64>, TypesError> {
            match a.trim() {
                "auto" => Ok(None),
                t => t.parse::<f64>().map(Some).map_err(|_| bad()),
            }
        };
        let tag = match (name.trim(), args) {
            ("rewarded_soup", None) => MethodTag::RewardedSoup,
            ("morlhf_oracle", None) => MethodTag::MorlhfOracle,
            ("bone_soup", Some(a)) => MethodTag::BoneSoup { beta: param(a)? },
            ("aba", Some(a)) => MethodTag::Aba { beta: param(a)? },
            ("random_matrix", Some(a)) => MethodTag::RandomMatrix {
                id: a.trim().parse().map_err(|_| bad())?,
            },
            ("extrapolated", Some(a)) => {
                let (alpha, inner) = a.split_once(',').ok_or_else(bad)?;
                MethodTag::Extrapolated {
                    alpha: param(alpha)?,
                    inner: Box::new(inner.parse()?),
                }
            }
            _ => return Err(bad()),
        };
        tag.validate()?;
        Ok(tag)
    }
}

impl Serialize for MethodTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluated point of an empirical front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub preference: PreferenceVector,
    pub rewards: Vec<f64>,
    pub method: MethodTag,
}

impl FrontPoint {
    pub fn new(
        preference: PreferenceVector,
        rewards: Vec<f64>,
        method: MethodTag,
    ) -> Result<Self, TypesError> {
        if rewards.len() != preference.dim() {
            return Err(TypesError::DimensionMismatch {
                expected: preference.dim(),
                got: rewards.len(),
            });
        }
        Ok(Self {
            preference,
            rewards,
            method,
        })
    }
}
