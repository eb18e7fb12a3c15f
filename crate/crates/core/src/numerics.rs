//! Vector arithmetic and simplex-aware numerics.
//!
//! Generic vectors are plain `&[f64]`; points of the probability simplex are
//! wrapped in [`ProbVector`], which checks non-negativity and unit mass on
//! construction.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a probability vector's mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Floor applied to the second argument of [`kl_divergence`].
pub const KL_FLOOR: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("probability vector is empty"));
        }
        if let Some(c) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "probability entry {c} is {} (must be finite and >= 0)",
                p[c]
            )));
        }
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!(
                "probability mass {mass} is not within {MASS_TOLERANCE} of 1"
            )));
        }
        Ok(ProbVector(p))
    }

    /// Clamps negatives to zero and rescales to unit mass.
    pub fn normalized(mut p: Vec<f64>) -> Result<Self> {
        for v in p.iter_mut() {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite entry in probability vector"));
            }
            *v = v.max(0.0);
        }
        let mass: f64 = p.iter().sum();
        if mass <= 0.0 {
            return Err(Error::invalid("probability vector has zero mass"));
        }
        p.iter_mut().for_each(|v| *v /= mass);
        ProbVector::new(p)
    }

    pub fn uniform(classes: usize) -> Self {
        ProbVector(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut p = vec![0.0; classes];
        p[class] = 1.0;
        ProbVector(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Convex combination `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &ProbVector, weight: f64) -> Result<ProbVector> {
        check_len(self, other)?;
        ProbVector::normalized(
            self.iter()
                .zip(other.iter())
                .map(|(a, b)| weight * a + (1.0 - weight) * b)
                .collect(),
        )
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        ProbVector::new(p)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Temperature-scaled softmax `σ(logits / temperature)`, stabilized by max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    Ok(ProbVector(softmax_unchecked(logits, temperature)))
}

/// Softmax for internal hot paths where the inputs are already known to be finite.
pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Re-tempers a distribution: `softmax(log p / temperature)`.
///
/// For a distribution that was itself produced as `softmax(z / ζ)` this equals
/// `softmax(z / (ζ·temperature))`. Zero entries stay zero.
pub fn temper(p: &ProbVector, temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if temperature == 1.0 {
        return Ok(p.clone());
    }
    let max_log = p
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| v.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = p
        .iter()
        .map(|v| {
            if *v > 0.0 {
                ((v.ln() - max_log) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    ProbVector::normalized(raw)
}

/// `KL(p ‖ q) = Σ p_c log(p_c / q_c)` with `0·log 0 = 0` and `q` floored at [`KL_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(kl_unchecked(p, q))
}

pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pc, _)| **pc > 0.0)
        .map(|(pc, qc)| pc * (pc.ln() - qc.max(KL_FLOOR).ln()))
        .sum();
    kl.max(0.0)
}

/// Shannon entropy in nats; divided by `ln C` when `normalized` is set.
pub fn shannon_entropy(p: &[f64], normalized: bool) -> f64 {
    let h: f64 = -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    let h = h.max(0.0);
    if normalized {
        if p.len() < 2 {
            return 0.0;
        }
        (h / (p.len() as f64).ln()).min(1.0)
    } else {
        h
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(squared_l2(a, b).sqrt())
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

pub(crate) fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lowest index of the maximum entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
