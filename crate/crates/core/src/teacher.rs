//! Teacher predictions and the ball-union description of their bias.
//!
//! Three teachers are provided:
//!
//! * [`SyntheticBiased`] places every prediction inside one ball of a
//!   [`BiasStructure`], so the ball-union property holds by construction.
//! * [`FrozenLogits`] replays precomputed per-sample logits at temperature ζ.
//! * [`Prototype`] is a nearest-class-mean few-shot teacher: a softmax over
//!   cosine similarities to per-class feature prototypes, re-fitted on the
//!   labeled set each round. It stands in for a vision-language few-shot
//!   adapter, which this crate does not implement.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{read_float_rows, Sample};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, project_to_simplex, softmax, squared_l2, ProbVector};
use crate::rng::{mix64, stream, Stream};

/// Default teacher temperature ζ.
pub const DEFAULT_ZETA: f64 = 0.01;

/// Slack added to ball radii in membership tests to absorb float rounding.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

/// `K` balls `(μ_k, r_k)` in the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasStructure {
    centroids: Vec<ProbVector>,
    radii: Vec<f64>,
}

impl BiasStructure {
    /// Radii may be zero (degenerate point clusters).
    pub fn new(centroids: Vec<ProbVector>, radii: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("bias structure needs at least one cluster"));
        }
        if centroids.len() != radii.len() {
            return Err(Error::invalid(format!(
                "{} centroids but {} radii",
                centroids.len(),
                radii.len()
            )));
        }
        let classes = centroids[0].len();
        if centroids.iter().any(|c| c.len() != classes) {
            return Err(Error::invalid("centroids differ in dimension"));
        }
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("radii must be finite and non-negative"));
        }
        Ok(BiasStructure { centroids, radii })
    }

    /// Synthetic clusters: `μ_k = confidence·e_{k mod C} + (1 − confidence)·b_k`,
    /// where `b_k ∝ exp(skew·z)` is a seeded skewed background with `z ~ N(0, I)`.
    pub fn skewed(classes: usize, clusters: usize, confidence: f64, skew: f64, radius: f64, seed: u64) -> Result<Self> {
        if classes < 2 || clusters == 0 {
            return Err(Error::config(format!(
                "need >= 2 classes and >= 1 cluster, got {classes} and {clusters}"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::config(format!(
                "teacher confidence must lie in [0, 1], got {confidence}"
            )));
        }
        let mut rng = stream(seed, Stream::Teacher, 0);
        let mut centroids = Vec::with_capacity(clusters);
        for k in 0..clusters {
            let background: Vec<f64> = (0..classes)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (skew * z).exp()
                })
                .collect();
            let total: f64 = background.iter().sum();
            let mut mu: Vec<f64> = background.iter().map(|b| (1.0 - confidence) * b / total).collect();
            mu[k % classes] += confidence;
            centroids.push(ProbVector::normalized(mu)?);
        }
        BiasStructure::new(centroids, vec![radius; clusters])
    }

    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn classes(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[ProbVector] {
        &self.centroids
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

/// Student-side balls `λ·e_c + (1 − λ)·μ_k` with radius `(1 − λ)·r_k + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedBias {
    centers: Vec<ProbVector>,
    /// `(cluster k, class c)` for every center, in the same order.
    sources: Vec<(usize, usize)>,
    /// One radius per source cluster.
    radii: Vec<f64>,
    lambda: f64,
    epsilon: f64,
}

impl PropagatedBias {
    pub fn centers(&self) -> &[ProbVector] {
        &self.centers
    }

    pub fn sources(&self) -> &[(usize, usize)] {
        &self.sources
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn center_radius(&self, index: usize) -> f64 {
        self.radii[self.sources[index].0]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Center index for cluster `k` and class `c`.
    pub fn center_index(&self, cluster: usize, class: usize) -> usize {
        cluster * self.classes() + class
    }

    pub fn classes(&self) -> usize {
        self.centers[0].len()
    }
}

pub fn propagate_bias(bias: &BiasStructure, lambda: f64, epsilon: f64, classes: usize) -> Result<PropagatedBias> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if classes != bias.classes() {
        return Err(Error::invalid(format!(
            "bias lives on {} classes, asked for {classes}",
            bias.classes()
        )));
    }
    let mut centers = Vec::with_capacity(bias.clusters() * classes);
    let mut sources = Vec::with_capacity(bias.clusters() * classes);
    for (k, mu) in bias.centroids.iter().enumerate() {
        for c in 0..classes {
            let center: Vec<f64> = mu
                .iter()
                .enumerate()
                .map(|(j, m)| (1.0 - lambda) * m + if j == c { lambda } else { 0.0 })
                .collect();
            centers.push(ProbVector::normalized(center)?);
            sources.push((k, c));
        }
    }
    let radii = bias.radii.iter().map(|r| (1.0 - lambda) * r + epsilon).collect();
    Ok(PropagatedBias {
        centers,
        sources,
        radii,
        lambda,
        epsilon,
    })
}

/// A finite union of L2 balls.
pub trait BallUnion {
    fn ball_count(&self) -> usize;
    fn ball(&self, index: usize) -> (&[f64], f64);
}

impl BallUnion for BiasStructure {
    fn ball_count(&self) -> usize {
        self.centroids.len()
    }

    fn ball(&self, index: usize) -> (&[f64], f64) {
        (&self.centroids[index], self.radii[index])
    }
}

impl BallUnion for PropagatedBias {
    fn ball_count(&self) -> usize {
        self.centers.len()
    }

    fn ball(&self, index: usize) -> (&[f64], f64) {
        (&self.centers[index], self.center_radius(index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub nearest: usize,
    pub distance: f64,
}

/// Whether `p` lies in any ball, plus the nearest center and its distance.
pub fn bias_membership(p: &[f64], balls: &impl BallUnion) -> Result<Membership> {
    let mut member = false;
    let mut nearest = 0;
    let mut best = f64::INFINITY;
    for i in 0..balls.ball_count() {
        let (center, radius) = balls.ball(i);
        if center.len() != p.len() {
            return Err(Error::invalid(format!(
                "point has {} classes, ball {i} has {}",
                p.len(),
                center.len()
            )));
        }
        let d = squared_l2(p, center).sqrt();
        if d <= radius + MEMBERSHIP_SLACK {
            member = true;
        }
        if d < best {
            best = d;
            nearest = i;
        }
    }
    Ok(Membership {
        member,
        nearest,
        distance: best,
    })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Teacher whose prediction for a sample is a point in the ball of the
/// cluster its class maps to. The in-ball offset is a pure function of the
/// sample id and the teacher's salt.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBiased {
    bias: BiasStructure,
    /// `assignment[c]` is the cluster used for class `c`.
    assignment: Vec<usize>,
    salt: u64,
}

impl SyntheticBiased {
    /// Class `c` maps to cluster `c mod K`.
    pub fn new(bias: BiasStructure, salt: u64) -> Self {
        let assignment = (0..bias.classes()).map(|c| c % bias.clusters()).collect();
        SyntheticBiased { bias, assignment, salt }
    }

    pub fn with_assignment(bias: BiasStructure, assignment: Vec<usize>, salt: u64) -> Result<Self> {
        if assignment.len() != bias.classes() {
            return Err(Error::config(format!(
                "assignment covers {} classes, bias has {}",
                assignment.len(),
                bias.classes()
            )));
        }
        if let Some(k) = assignment.iter().find(|k| **k >= bias.clusters()) {
            return Err(Error::config(format!(
                "assignment names cluster {k} but only {} exist",
                bias.clusters()
            )));
        }
        Ok(SyntheticBiased { bias, assignment, salt })
    }

    pub fn bias(&self) -> &BiasStructure {
        &self.bias
    }

    pub fn cluster_of_class(&self, class: usize) -> usize {
        self.assignment[class]
    }

    pub fn predict(&self, sample: &Sample) -> Result<ProbVector> {
        let k = *self
            .assignment
            .get(sample.label)
            .ok_or_else(|| Error::invalid(format!("label {} outside the teacher's classes", sample.label)))?;
        let mu = &self.bias.centroids[k];
        let r = self.bias.radii[k];
        let classes = mu.len();
        if r == 0.0 || classes < 2 {
            return Ok(mu.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.salt ^ mix64(sample.id as u64)));
        // direction in the tangent space of the simplex (zero-sum vectors)
        let mut dir: Vec<f64> = (0..classes).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = dir.iter().sum::<f64>() / classes as f64;
        dir.iter_mut().for_each(|v| *v -= mean);
        let n = norm(&dir);
        if n == 0.0 {
            return Ok(mu.clone());
        }
        let u: f64 = rng.random();
        let rho = r * u.powf(1.0 / (classes - 1) as f64);
        let raw: Vec<f64> = mu.iter().zip(&dir).map(|(m, d)| m + rho * d / n).collect();
        let p = match ProbVector::normalized(project_to_simplex(&raw)) {
            Ok(p) => p,
            Err(_) => return Ok(mu.clone()),
        };
        if squared_l2(&p, mu).sqrt() <= r {
            Ok(p)
        } else {
            Ok(mu.clone())
        }
    }
}

/// Precomputed logits, one row per sample id, replayed at temperature ζ.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLogits {
    logits: Vec<Vec<f64>>,
    zeta: f64,
}

impl FrozenLogits {
    pub fn new(logits: Vec<Vec<f64>>, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(Error::config(format!("zeta must be positive, got {zeta}")));
        }
        if logits.is_empty() {
            return Err(Error::config("logit table is empty"));
        }
        let classes = logits[0].len();
        if let Some(row) = logits.iter().position(|r| r.len() != classes) {
            return Err(Error::config(format!("logit row {row} is ragged")));
        }
        Ok(FrozenLogits { logits, zeta })
    }

    /// Headerless CSV, one row of C logits per sample id.
    pub fn load(path: &Path, zeta: f64) -> Result<Self> {
        FrozenLogits::new(read_float_rows(path, None)?, zeta)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.logits[0].len()
    }

    pub fn predict(&self, sample: &Sample) -> Result<ProbVector> {
        let row = self.logits.get(sample.id).ok_or(Error::Lookup(sample.id))?;
        softmax(row, self.zeta)
    }
}

/// Softmax over cosine similarities to L2-normalized class prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    prototypes: Vec<Option<Vec<f64>>>,
    zeta: f64,
}

impl Prototype {
    /// A teacher with no prototypes yet; adapt it before predicting.
    pub fn new(classes: usize, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(Error::config(format!("zeta must be positive, got {zeta}")));
        }
        if classes < 2 {
            return Err(Error::config("prototype teacher needs >= 2 classes"));
        }
        Ok(Prototype {
            prototypes: vec![None; classes],
            zeta,
        })
    }

    pub fn from_prototypes(prototypes: Vec<Vec<f64>>, zeta: f64) -> Result<Self> {
        let mut t = Prototype::new(prototypes.len(), zeta)?;
        for (c, p) in prototypes.into_iter().enumerate() {
            let n = norm(&p);
            if n == 0.0 {
                return Err(Error::invalid(format!("prototype {c} is the zero vector")));
            }
            t.prototypes[c] = Some(p.into_iter().map(|v| v / n).collect());
        }
        Ok(t)
    }

    pub fn prototypes(&self) -> &[Option<Vec<f64>>] {
        &self.prototypes
    }

    /// Prototype of class `c` = normalized mean of its labeled features.
    /// Classes without labeled samples keep their previous prototype.
    pub fn adapt(&self, labeled: &[&Sample]) -> Result<Prototype> {
        if labeled.is_empty() {
            return Err(Error::protocol("cannot adapt prototypes on an empty labeled set"));
        }
        let classes = self.prototypes.len();
        let dim = labeled[0].features.len();
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for s in labeled {
            if s.label >= classes {
                return Err(Error::invalid(format!("label {} out of range", s.label)));
            }
            if s.features.len() != dim {
                return Err(Error::invalid("labeled samples differ in dimension"));
            }
            sums[s.label].iter_mut().zip(&s.features).for_each(|(a, x)| *a += x);
            counts[s.label] += 1;
        }
        let mut next = self.clone();
        for c in 0..classes {
            if counts[c] == 0 {
                continue;
            }
            let n = norm(&sums[c]);
            if n > 0.0 {
                next.prototypes[c] = Some(sums[c].iter().map(|v| v / n).collect());
            }
        }
        Ok(next)
    }

    /// Classes without a prototype get similarity −1.
    pub fn predict(&self, sample: &Sample) -> Result<ProbVector> {
        if self.prototypes.iter().all(Option::is_none) {
            return Err(Error::protocol("prototype teacher has not been adapted"));
        }
        let sims = self
            .prototypes
            .iter()
            .map(|p| match p {
                Some(p) => cosine_similarity(&sample.features, p),
                None => Ok(-1.0),
            })
            .collect::<Result<Vec<f64>>>()?;
        softmax(&sims, self.zeta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherKind {
    SyntheticBiased(SyntheticBiased),
    FrozenLogits(FrozenLogits),
    Prototype(Prototype),
}

/// What the experiment driver needs from a teacher.
pub trait Teacher: Send + Sync {
    fn predict(&self, sample: &Sample) -> Result<ProbVector>;

    fn is_adaptable(&self) -> bool;

    /// A copy fitted to the labeled samples; non-adaptable teachers return themselves.
    fn adapted(&self, labeled: &[&Sample]) -> Result<Self>
    where
        Self: Sized;

    /// The ball union the predictions are known to lie in, if any.
    fn bias(&self) -> Option<&BiasStructure> {
        None
    }

    /// Index of the bias ball the prediction for `sample` is drawn from.
    fn bias_cluster(&self, _sample: &Sample) -> Option<usize> {
        None
    }
}

impl Teacher for TeacherKind {
    fn predict(&self, sample: &Sample) -> Result<ProbVector> {
        match self {
            TeacherKind::SyntheticBiased(t) => t.predict(sample),
            TeacherKind::FrozenLogits(t) => t.predict(sample),
            TeacherKind::Prototype(t) => t.predict(sample),
        }
    }

    fn is_adaptable(&self) -> bool {
        matches!(self, TeacherKind::Prototype(_))
    }

    fn adapted(&self, labeled: &[&Sample]) -> Result<Self> {
        match self {
            TeacherKind::Prototype(t) => Ok(TeacherKind::Prototype(t.adapt(labeled)?)),
            other => Ok(other.clone()),
        }
    }

    fn bias(&self) -> Option<&BiasStructure> {
        match self {
            TeacherKind::SyntheticBiased(t) => Some(t.bias()),
            _ => None,
        }
    }

    fn bias_cluster(&self, sample: &Sample) -> Option<usize> {
        match self {
            TeacherKind::SyntheticBiased(t) => t.assignment.get(sample.label).copied(),
            _ => None,
        }
    }
}
