//! Diagnostics: k-means over predictions, KNN loss to propagated centroids,
//! cluster purity, bias coverage, and the four selection criteria.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, PoolState};
use crate::error::{Error, Result};
use crate::numerics::{shannon_entropy, squared_l2, ProbVector};
use crate::rng::{stream, Stream};
use crate::teacher::{bias_membership, BiasStructure, PropagatedBias};

/// Default bias-propagation threshold on the KNN distance.
pub const DEFAULT_EPSILON_THRESHOLD: f64 = 0.3;

/// Points sampled when estimating a feature-set diameter.
pub const DIAMETER_SAMPLE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_l2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count<P: AsRef<[f64]>>(points: &[P]) -> usize {
    points
        .iter()
        .map(|p| p.as_ref().iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Lloyd's k-means with k-means++ seeding: the first center is uniform, the
/// rest are drawn with probability proportional to the squared distance to
/// the nearest center. Stops at an assignment fixpoint or after `max_iters`.
/// A cluster that empties is moved onto the point farthest from its centroid.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, max_iters: usize) -> Result<ClusterReport> {
    if k == 0 || max_iters == 0 {
        return Err(Error::invalid("k-means needs k >= 1 and max_iters >= 1"));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {distinct} distinct points"
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::invalid("k-means points differ in dimension"));
    }
    let mut rng = stream(seed, Stream::Metrics, 0);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_l2(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, w) in d2.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > u {
                break;
            }
        }
        let c = points[pick.expect("k <= distinct points")].as_ref().to_vec();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_l2(p.as_ref(), &c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        let mut new_inertia = 0.0;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p.as_ref(), &centroids);
            changed |= assignments[i] != j;
            assignments[i] = j;
            dist[i] = d;
            new_inertia += d;
        }
        debug_assert!(
            new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia rose: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p.as_ref()).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // farthest point from its own centroid, lowest index on ties
                let mut far = 0;
                for i in 1..points.len() {
                    if dist[i] > dist[far] {
                        far = i;
                    }
                }
                centroids[j] = points[far].as_ref().to_vec();
                counts[assignments[far]] -= 1;
                assignments[far] = j;
                counts[j] = 1;
                dist[far] = 0.0;
            }
        }
    }
    Ok(ClusterReport {
        k,
        centroids,
        assignments,
        inertia,
        iterations,
    })
}

/// `Σ_clusters (largest class count) / N`.
pub fn cluster_purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} assignments but {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("purity of an empty clustering"));
    }
    let mut counts: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, usize>> = Default::default();
    for (&a, &y) in assignments.iter().zip(labels) {
        *counts.entry(a).or_default().entry(y).or_default() += 1;
    }
    let majority: usize = counts.values().map(|c| c.values().max().copied().unwrap_or(0)).sum();
    Ok(majority as f64 / labels.len() as f64)
}

/// K-means with `k` clusters over student predictions, scored by purity
/// against the true labels. `k` is capped at the number of distinct points.
pub fn prediction_purity(predictions: &[ProbVector], labels: &[usize], k: usize, seed: u64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("purity of an empty prediction set"));
    }
    let k = k.min(distinct_count(predictions));
    let report = kmeans(predictions, k, seed, 100)?;
    cluster_purity(&report.assignments, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnLoss {
    /// Mean L2 distance to the propagated centroid.
    pub mean: f64,
    /// Fraction of points within the ε threshold.
    pub within_threshold: f64,
}

/// Mean `‖f_r(x) − (λ·e_y + (1 − λ)·μ_k)‖₂` where `k` is the cluster assigned
/// to the teacher's prediction for `x`.
pub fn knn_loss(
    student: &[ProbVector],
    centroids: &[Vec<f64>],
    assignments: &[usize],
    labels: &[usize],
    lambda: f64,
    epsilon: f64,
) -> Result<KnnLoss> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if student.len() != labels.len() || student.len() != assignments.len() {
        return Err(Error::protocol(
            "every student prediction needs a label and a cluster assignment",
        ));
    }
    if student.is_empty() {
        return Err(Error::invalid("KNN loss over an empty set"));
    }
    let mut total = 0.0;
    let mut within = 0;
    for ((p, &k), &y) in student.iter().zip(assignments).zip(labels) {
        let mu = centroids
            .get(k)
            .ok_or_else(|| Error::protocol(format!("no centroid for cluster {k}")))?;
        if mu.len() != p.len() || y >= p.len() {
            return Err(Error::invalid("centroid, prediction, and label disagree on classes"));
        }
        let d = p
            .iter()
            .zip(mu)
            .enumerate()
            .map(|(c, (pc, m))| {
                let target = (1.0 - lambda) * m + if c == y { lambda } else { 0.0 };
                (pc - target) * (pc - target)
            })
            .sum::<f64>()
            .sqrt();
        total += d;
        if d <= epsilon {
            within += 1;
        }
    }
    Ok(KnnLoss {
        mean: total / student.len() as f64,
        within_threshold: within as f64 / student.len() as f64,
    })
}

/// KNN loss against the teacher's own ball centers; `clusters[i]` is the
/// ball the teacher's prediction for point `i` was drawn from.
pub fn knn_loss_true(
    student: &[ProbVector],
    bias: &BiasStructure,
    clusters: &[usize],
    labels: &[usize],
    lambda: f64,
    epsilon: f64,
) -> Result<KnnLoss> {
    let centroids: Vec<Vec<f64>> = bias.centroids().iter().map(|c| c.to_vec()).collect();
    knn_loss(student, &centroids, clusters, labels, lambda, epsilon)
}

/// KNN loss with teacher centroids fitted by k-means over the teacher's own
/// predictions on the same points.
pub fn knn_loss_fitted(
    student: &[ProbVector],
    teacher: &[ProbVector],
    labels: &[usize],
    clusters: usize,
    lambda: f64,
    epsilon: f64,
    seed: u64,
) -> Result<KnnLoss> {
    if teacher.len() != student.len() {
        return Err(Error::protocol("teacher and student prediction counts differ"));
    }
    let k = clusters.min(distinct_count(teacher)).max(1);
    let report = kmeans(teacher, k, seed, 100)?;
    knn_loss(student, &report.centroids, &report.assignments, labels, lambda, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub fraction_inside: f64,
    /// Largest distance beyond the radius among predictions outside every
    /// ball; 0 when all are inside.
    pub max_violation: f64,
}

/// Checks predictions against the propagated balls. The radius adds the
/// convergence error ε, which is an L1 bound; since `‖·‖₂ ≤ ‖·‖₁` it also
/// bounds the L2 distance used for membership.
pub fn bias_coverage_check(predictions: &[ProbVector], propagated: &PropagatedBias) -> Result<Coverage> {
    if predictions.is_empty() {
        return Ok(Coverage {
            fraction_inside: 1.0,
            max_violation: 0.0,
        });
    }
    let mut inside = 0;
    let mut worst: f64 = 0.0;
    for p in predictions {
        let m = bias_membership(p, propagated)?;
        if m.member {
            inside += 1;
        } else {
            worst = worst.max(m.distance - propagated.center_radius(m.nearest));
        }
    }
    Ok(Coverage {
        fraction_inside: inside as f64 / predictions.len() as f64,
        max_violation: worst,
    })
}

/// Number of propagated centers that are the nearest center of at least one
/// prediction.
pub fn active_centers(predictions: &[ProbVector], propagated: &PropagatedBias) -> Result<usize> {
    let mut used = BTreeSet::new();
    for p in predictions {
        used.insert(bias_membership(p, propagated)?.nearest);
    }
    Ok(used.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaBundle {
    pub uncertainty: f64,
    pub class_balance: f64,
    pub feature_diversity: f64,
    pub prob_diversity: f64,
}

/// Largest pairwise distance over a seeded subsample of at most
/// [`DIAMETER_SAMPLE`] points.
pub fn feature_diameter<P: AsRef<[f64]>>(points: &[P], seed: u64) -> f64 {
    let mut rng = stream(seed, Stream::Metrics, 1);
    let mut ids: Vec<usize> = if points.len() > DIAMETER_SAMPLE {
        sample(&mut rng, points.len(), DIAMETER_SAMPLE).into_vec()
    } else {
        (0..points.len()).collect()
    };
    ids.sort_unstable();
    let mut best: f64 = 0.0;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            best = best.max(squared_l2(points[i].as_ref(), points[j].as_ref()));
        }
    }
    best.sqrt()
}

fn mean_min_distance<P: AsRef<[f64]>>(chosen: &[usize], reference: &BTreeSet<usize>, points: &[P]) -> f64 {
    let total: f64 = chosen
        .iter()
        .map(|&i| {
            reference
                .iter()
                .map(|&r| squared_l2(points[i].as_ref(), points[r].as_ref()))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / chosen.len() as f64
}

/// The four selection criteria for one round's picks. Diversities are
/// measured against the labeled set as it stood before the picks (`pool`),
/// normalized by `feature_diameter` and by √2 respectively, and clamped to
/// [0, 1]; with no labeled samples they are 1.
pub fn criteria_bundle(
    chosen: &[usize],
    pool: &PoolState,
    probs: &[ProbVector],
    features: &[Vec<f64>],
    oracle: &Dataset,
    feature_diameter: f64,
) -> Result<CriteriaBundle> {
    if chosen.is_empty() {
        return Err(Error::invalid("criteria of an empty selection"));
    }
    let classes = pool.classes();
    let uncertainty = chosen.iter().map(|&i| shannon_entropy(&probs[i], true)).sum::<f64>() / chosen.len() as f64;
    let mut histogram = vec![0.0; classes];
    for &i in chosen {
        let y = oracle
            .label(i)
            .ok_or_else(|| Error::protocol(format!("oracle has no sample {i}")))?;
        histogram[y] += 1.0;
    }
    histogram.iter_mut().for_each(|h| *h /= chosen.len() as f64);
    let class_balance = shannon_entropy(&histogram, true);
    let normalize = |d: f64, scale: f64| {
        if d.is_infinite() {
            1.0
        } else if scale > 0.0 {
            (d / scale).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    let labeled = pool.labeled();
    Ok(CriteriaBundle {
        uncertainty,
        class_balance,
        feature_diversity: normalize(mean_min_distance(chosen, labeled, features), feature_diameter),
        prob_diversity: normalize(mean_min_distance(chosen, labeled, probs), std::f64::consts::SQRT_2),
    })
}
