//! Front-quality metrics. All rewards are maximized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::FrontPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("hypervolume supports 2 or 3 objectives, got {0}")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("front is empty")]
    EmptyFront,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

type Result<T> = std::result::Result<T, MetricsError>;

fn check_dims<'a>(points: impl IntoIterator<Item = &'a [f64]>, n: usize) -> Result<()> {
    for p in points {
        if p.len() != n {
            return Err(MetricsError::DimensionMismatch {
                expected: n,
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// 2-D sweep; `points` already strictly above the reference.
fn hv2(points: &mut [[f64; 2]], reference: [f64; 2]) -> f64 {
    points.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut best_y = reference[1];
    let mut area = 0.0;
    for p in points.iter() {
        if p[1] > best_y {
            area += (p[0] - reference[0]) * (p[1] - best_y);
            best_y = p[1];
        }
    }
    area
}

/// Exact volume of the union of boxes `[reference, p]`. Points not strictly
/// above the reference in every coordinate contribute nothing.
pub fn hypervolume<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> Result<f64> {
    let n = reference.len();
    if !(2..=3).contains(&n) {
        return Err(MetricsError::UnsupportedDimension(n));
    }
    check_dims(points.iter().map(AsRef::as_ref), n)?;
    let live: Vec<&[f64]> = points
        .iter()
        .map(AsRef::as_ref)
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x > r))
        .collect();
    if n == 2 {
        let mut pts: Vec<[f64; 2]> = live.iter().map(|p| [p[0], p[1]]).collect();
        return Ok(hv2(&mut pts, [reference[0], reference[1]]));
    }
    // slice along the third coordinate, highest level first
    let mut sorted = live;
    sorted.sort_by(|a, b| b[2].total_cmp(&a[2]));
    let mut volume = 0.0;
    let mut slab: Vec<[f64; 2]> = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let z = sorted[i][2];
        while i < sorted.len() && sorted[i][2] == z {
            slab.push([sorted[i][0], sorted[i][1]]);
            i += 1;
        }
        let next = if i < sorted.len() {
            sorted[i][2]
        } else {
            reference[2]
        };
        volume += hv2(&mut slab, [reference[0], reference[1]]) * (z - next);
    }
    Ok(volume)
}

/// Mean of `μᵀr` over the front.
pub fn inner_product_score(front: &[FrontPoint]) -> Result<f64> {
    if front.is_empty() {
        return Err(MetricsError::EmptyFront);
    }
    let mut total = 0.0;
    for p in front {
        check_dims([p.rewards.as_slice()], p.preference.dim())?;
        total += p
            .preference
            .as_slice()
            .iter()
            .zip(&p.rewards)
            .map(|(m, r)| m * r)
            .sum::<f64>();
    }
    Ok(total / front.len() as f64)
}

fn sign(x: f64, eps: f64) -> i8 {
    if x.abs() <= eps {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// Fraction of ordered pairs whose reward orderings follow their preference
/// orderings on every dimension where the preferences differ. Reward
/// differences within `epsilon` count as ties.
pub fn controllability(front: &[FrontPoint], epsilon: f64) -> Result<f64> {
    let Some(first) = front.first() else {
        return Err(MetricsError::EmptyFront);
    };
    let n = first.preference.dim();
    for p in front {
        check_dims([p.preference.as_slice(), p.rewards.as_slice()], n)?;
    }
    let count = front.len();
    if count == 1 {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for (i, a) in front.iter().enumerate() {
        for (j, b) in front.iter().enumerate() {
            if i == j {
                continue;
            }
            let ok = (0..n).all(|k| {
                let ps = sign(a.preference.as_slice()[k] - b.preference.as_slice()[k], 0.0);
                ps == 0 || ps == sign(a.rewards[k] - b.rewards[k], epsilon)
            });
            agree += ok as usize;
        }
    }
    Ok(agree as f64 / (count * (count - 1)) as f64)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean squared distance between consecutive reward vectors, in the given order.
pub fn sparsity_of<P: AsRef<[f64]>>(rewards: &[P]) -> Result<f64> {
    if rewards.len() < 2 {
        return Err(MetricsError::TooFewPoints {
            needed: 2,
            got: rewards.len(),
        });
    }
    check_dims(rewards.iter().map(AsRef::as_ref), rewards[0].as_ref().len())?;
    let total: f64 = rewards
        .windows(2)
        .map(|w| dist_sq(w[0].as_ref(), w[1].as_ref()))
        .sum();
    Ok(total / (rewards.len() - 1) as f64)
}

pub fn sparsity(front: &[FrontPoint]) -> Result<f64> {
    sparsity_of(
        &front
            .iter()
            .map(|p| p.rewards.as_slice())
            .collect::<Vec<_>>(),
    )
}

/// Standard deviation of nearest-neighbour distances.
pub fn spacing_of<P: AsRef<[f64]>>(rewards: &[P]) -> Result<f64> {
    let count = rewards.len();
    if count < 2 {
        return Err(MetricsError::TooFewPoints {
            needed: 2,
            got: count,
        });
    }
    check_dims(rewards.iter().map(AsRef::as_ref), rewards[0].as_ref().len())?;
    let nearest: Vec<f64> = (0..count)
        .map(|i| {
            (0..count)
                .filter(|&j| j != i)
                .map(|j| dist_sq(rewards[i].as_ref(), rewards[j].as_ref()).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = nearest.iter().sum::<f64>() / count as f64;
    let var = nearest.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / count as f64;
    Ok(var.sqrt())
}

pub fn spacing(front: &[FrontPoint]) -> Result<f64> {
    spacing_of(
        &front
            .iter()
            .map(|p| p.rewards.as_slice())
            .collect::<Vec<_>>(),
    )
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a != b
}

/// Non-dominated subset with exact duplicates collapsed to their first
/// occurrence; input order is preserved.
pub fn pareto_filter<P: AsRef<[f64]> + Clone>(points: &[P]) -> Vec<P> {
    let mut unique: Vec<&P> = Vec::with_capacity(points.len());
    for p in points {
        if !unique.iter().any(|q| q.as_ref() == p.as_ref()) {
            unique.push(p);
        }
    }
    unique
        .iter()
        .filter(|p| !unique.iter().any(|q| dominates(q.as_ref(), p.as_ref())))
        .map(|p| (*p).clone())
        .collect()
}

pub fn front_length_of<P: AsRef<[f64]> + Clone>(points: &[P]) -> usize {
    pareto_filter(points).len()
}

pub fn front_length(front: &[FrontPoint]) -> usize {
    front_length_of(
        &front
            .iter()
            .map(|p| p.rewards.as_slice())
            .collect::<Vec<_>>(),
    )
}

/// Componentwise minimum over every point of every front, lowered by a tenth
/// of the componentwise range (by 0.1 where the range is zero).
pub fn auto_reference<'a, I, P>(fronts: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [P]>,
    P: AsRef<[f64]> + 'a,
{
    let mut lo: Option<Vec<f64>> = None;
    let mut hi: Vec<f64> = Vec::new();
    for front in fronts {
        for p in front {
            let p = p.as_ref();
            match &mut lo {
                None => {
                    lo = Some(p.to_vec());
                    hi = p.to_vec();
                }
                Some(l) => {
                    check_dims([p], l.len())?;
                    for k in 0..p.len() {
                        l[k] = l[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
            }
        }
    }
    let lo = lo.ok_or(MetricsError::EmptyFront)?;
    Ok(lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| {
            let range = h - l;
            if range > 0.0 {
                l - 0.1 * range
            } else {
                l - 0.1
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub hypervolume: f64,
    pub inner_product: f64,
    pub controllability: f64,
    pub front_length: usize,
    /// Absent for single-point fronts.
    pub sparsity: Option<f64>,
    pub spacing: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "method",
        "hypervolume",
        "inner_product",
        "controllability",
        "front_length",
        "sparsity",
        "spacing",
    ];

    /// All six metrics for a front given in preference-grid order.
    pub fn compute(
        method: &str,
        front: &[FrontPoint],
        reference: &[f64],
        epsilon: f64,
    ) -> Result<Self> {
        let rewards: Vec<&[f64]> = front.iter().map(|p| p.rewards.as_slice()).collect();
        Ok(Self {
            method: method.to_string(),
            hypervolume: hypervolume(&rewards, reference)?,
            inner_product: inner_product_score(front)?,
            controllability: controllability(front, epsilon)?,
            front_length: front_length(front),
            sparsity: (front.len() >= 2).then(|| sparsity(front)).transpose()?,
            spacing: (front.len() >= 2).then(|| spacing(front)).transpose()?,
        })
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            format!("{:.16e}", self.hypervolume),
            format!("{:.16e}", self.inner_product),
            format!("{:.16e}", self.controllability),
            self.front_length.to_string(),
            self.sparsity
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default(),
            self.spacing
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default(),
        ]
    }
}
