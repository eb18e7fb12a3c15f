//! Self-checks behind the `verify` command.
//!
//! Each suite draws random instances from a fixed seed and compares the
//! library against a direct computation: ball coverage of constructed
//! students, the closed-form optimal distillation target against projected
//! gradient descent, the incremental greedy selectors against brute-force
//! farthest-point search, and analytic gradients against finite differences.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{PoolState, Sample};
use crate::error::Result;
use crate::metrics::{active_centers, bias_coverage_check};
use crate::numerics::{project_to_simplex, shannon_entropy, softmax, squared_l2, ProbVector};
use crate::selection::{select_coreset, select_pcoreset, SelectionInput};
use crate::student::{optimal_target, Architecture, Batch, FeatureMap, Heads, LabeledItem, Student, UnlabeledItem};
use crate::teacher::{propagate_bias, BiasStructure, SyntheticBiased};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// First failure, or a summary statistic when everything passed.
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} trials ({})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials - self.failures,
            self.trials,
            self.detail
        )
    }
}

fn random_prob(rng: &mut ChaCha8Rng, classes: usize, scale: f64) -> ProbVector {
    let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-scale..scale)).collect();
    softmax(&logits, 1.0).expect("finite logits")
}

/// Zero-sum perturbation with L1 norm at most `budget` that keeps `p` in the simplex.
fn perturb(rng: &mut ChaCha8Rng, p: &[f64], budget: f64) -> Vec<f64> {
    if budget == 0.0 {
        return p.to_vec();
    }
    let raw: Vec<f64> = p.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let mut delta: Vec<f64> = raw.iter().map(|r| r - mean).collect();
    let l1: f64 = delta.iter().map(|d| d.abs()).sum();
    if l1 == 0.0 {
        return p.to_vec();
    }
    let mut scale = rng.random_range(0.0..1.0) * budget / l1;
    for (pi, di) in p.iter().zip(&delta) {
        if *di < 0.0 {
            scale = scale.min(pi / -di);
        }
    }
    for d in &mut delta {
        *d *= scale;
    }
    p.iter().zip(&delta).map(|(a, b)| (a + b).max(0.0)).collect()
}

/// Students built as `λ·e_y + (1 − λ)·f(x)` plus bounded noise must lie in
/// the propagated ball union, and occupy at most `K·C` of its balls.
pub fn verify_bias_coverage(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut detail = None;
    let mut most_active = 0usize;
    for trial in 0..trials {
        let classes = rng.random_range(3..=10);
        let clusters = rng.random_range(1..=8);
        let epsilon = [0.0, 0.05, 0.3][trial % 3];
        let lambda = rng.random_range(0.0..=1.0);
        let bias = BiasStructure::skewed(
            classes,
            clusters,
            rng.random_range(0.2..0.9),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..0.2),
            rng.random(),
        )?;
        let teacher = SyntheticBiased::new(bias.clone(), rng.random());
        let propagated = propagate_bias(&bias, lambda, epsilon, classes)?;
        let mut preds = Vec::with_capacity(40);
        for id in 0..40 {
            let sample = Sample {
                id,
                features: vec![0.0],
                label: rng.random_range(0..classes),
            };
            let target = optimal_target(sample.label, &teacher.predict(&sample)?, lambda)?;
            preds.push(ProbVector::normalized(perturb(&mut rng, &target, epsilon))?);
        }
        let coverage = bias_coverage_check(&preds, &propagated)?;
        let active = active_centers(&preds, &propagated)?;
        most_active = most_active.max(active);
        if coverage.fraction_inside != 1.0 || active > clusters * classes {
            failures += 1;
            detail.get_or_insert(format!(
                "trial {trial}: fraction inside {}, {active} active centers for K·C = {}",
                coverage.fraction_inside,
                clusters * classes
            ));
        }
    }
    Ok(SuiteReport {
        name: "bias coverage",
        trials,
        failures,
        detail: detail.unwrap_or_else(|| format!("at most {most_active} active centers")),
    })
}

/// Minimizes `λ·CE(y, p) + (1 − λ)·KL(f ‖ p)` over the simplex by projected
/// gradient descent with backtracking.
fn minimize_distill_objective(label: usize, teacher: &[f64], lambda: f64) -> Vec<f64> {
    let classes = teacher.len();
    let weights: Vec<f64> = (0..classes)
        .map(|j| (1.0 - lambda) * teacher[j] + if j == label { lambda } else { 0.0 })
        .collect();
    let objective = |p: &[f64]| -> f64 {
        weights
            .iter()
            .zip(p)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, q)| if *q > 0.0 { -w * q.ln() } else { f64::INFINITY })
            .sum()
    };
    let mut p = vec![1.0 / classes as f64; classes];
    let mut value = objective(&p);
    for _ in 0..20_000 {
        let grad: Vec<f64> = weights.iter().zip(&p).map(|(w, q)| -w / q).collect();
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-18 {
            let trial: Vec<f64> = p.iter().zip(&grad).map(|(q, g)| q - step * g).collect();
            let trial = project_to_simplex(&trial);
            let trial_value = objective(&trial);
            if trial_value < value {
                moved = squared_l2(&trial, &p) > 1e-30;
                p = trial;
                value = trial_value;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    p
}

/// The closed-form target `λ·e_y + (1 − λ)·f` against a numerical minimizer.
pub fn verify_optimal_target(trials: usize, seed: u64) -> Result<SuiteReport> {
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut detail = None;
    for trial in 0..trials {
        let classes = rng.random_range(2..=10);
        let teacher = random_prob(&mut rng, classes, 3.0);
        let label = rng.random_range(0..classes);
        let lambda = rng.random_range(0.0..=1.0);
        let closed = optimal_target(label, &teacher, lambda)?;
        let numeric = minimize_distill_objective(label, &teacher, lambda);
        let err = closed
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > TOL {
            failures += 1;
            detail.get_or_insert(format!("trial {trial}: max deviation {err:.3e}"));
        }
    }
    Ok(SuiteReport {
        name: "optimal distillation target",
        trials,
        failures,
        detail: detail.unwrap_or_else(|| format!("max deviation {worst:.3e}")),
    })
}

/// Farthest-point selection recomputing every distance at every step.
fn brute_force_farthest(
    points: &[Vec<f64>],
    labeled: &[usize],
    unlabeled: &[usize],
    query: usize,
    first: impl Fn(&[usize]) -> usize,
) -> Vec<usize> {
    let mut centers: Vec<usize> = labeled.to_vec();
    let mut chosen = Vec::new();
    if centers.is_empty() {
        let f = first(unlabeled);
        centers.push(f);
        chosen.push(f);
    }
    while chosen.len() < query {
        let mut best: Option<(usize, f64)> = None;
        for &u in unlabeled {
            if chosen.contains(&u) {
                continue;
            }
            let d = centers
                .iter()
                .map(|&c| squared_l2(&points[u], &points[c]).sqrt())
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((u, d));
            }
        }
        let (u, _) = best.expect("query fits the pool");
        centers.push(u);
        chosen.push(u);
    }
    chosen
}

fn first_by(ids: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = ids[0];
    for &id in &ids[1..] {
        if score(id) > score(best) {
            best = id;
        }
    }
    best
}

/// Incremental greedy selectors against [`brute_force_farthest`].
pub fn verify_greedy_selection(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut detail = None;
    for trial in 0..trials {
        let classes = rng.random_range(2..=5);
        let n = rng.random_range(2..=20);
        let dim = rng.random_range(1..=4);
        let probs: Vec<ProbVector> = (0..n).map(|_| random_prob(&mut rng, classes, 2.0)).collect();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let n_labeled = rng.random_range(0..n);
        let mut labeled: Vec<usize> = ids[..n_labeled].to_vec();
        let mut unlabeled: Vec<usize> = ids[n_labeled..].to_vec();
        labeled.sort_unstable();
        unlabeled.sort_unstable();
        let query = rng.random_range(1..=unlabeled.len());
        let revealed: BTreeMap<usize, usize> = labeled.iter().map(|&id| (id, id % classes)).collect();
        let pool = PoolState::from_parts(classes, revealed, unlabeled.iter().copied())?;
        let input = SelectionInput::new(&pool, &probs, query).with_features(&features);

        let prob_points: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
        let expect_p = brute_force_farthest(&prob_points, &labeled, &unlabeled, query, |c| {
            first_by(c, |id| shannon_entropy(&probs[id], true))
        });
        let expect_c = brute_force_farthest(&features, &labeled, &unlabeled, query, |c| {
            first_by(c, |id| squared_l2(&features[id], &vec![0.0; dim]))
        });
        let got_p = select_pcoreset(&input)?.chosen_ids;
        let got_c = select_coreset(&input)?.chosen_ids;
        if got_p != expect_p || got_c != expect_c {
            failures += 1;
            detail.get_or_insert(format!(
                "trial {trial}: pcoreset {got_p:?} vs {expect_p:?}, coreset {got_c:?} vs {expect_c:?}"
            ));
        }
    }
    Ok(SuiteReport {
        name: "greedy selection vs brute force",
        trials,
        failures,
        detail: detail.unwrap_or_else(|| "all selections identical".into()),
    })
}

/// Analytic gradients of the combined loss against central differences.
pub fn verify_gradients(trials: usize, seed: u64) -> Result<SuiteReport> {
    const STEP: f64 = 1e-5;
    const REL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut detail = None;
    for trial in 0..trials {
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(1..=4);
        let feature_map = match trial % 3 {
            0 => FeatureMap::Identity,
            1 => FeatureMap::Linear { hidden: 3 },
            _ => FeatureMap::Mlp1 { hidden: 3 },
        };
        let mut arch = Architecture::new(feature_map, dim, classes);
        if trial % 2 == 1 {
            arch.heads = Heads::Single;
        }
        let student = Student::seeded(arch, rng.random())?;
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let targets: Vec<ProbVector> = (0..6).map(|_| random_prob(&mut rng, classes, 2.0)).collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..classes)).collect();
        let batch = Batch {
            labeled: (0..3)
                .map(|i| LabeledItem {
                    x: &xs[i],
                    label: labels[i],
                    target: Some(&targets[i]),
                })
                .collect(),
            unlabeled: (3..6)
                .map(|i| UnlabeledItem {
                    x: &xs[i],
                    target: &targets[i],
                })
                .collect(),
        };
        let lambda = rng.random_range(0.0..=1.0);
        let (_, grad) = student.combined_gradient(&batch, lambda)?;
        let mut probe = student.clone();
        let mut params = student.params().to_vec();
        let mut bad = None;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + STEP;
            probe.set_params(&params)?;
            let up = probe.combined_loss(&batch, lambda)?;
            params[i] = orig - STEP;
            probe.set_params(&params)?;
            let down = probe.combined_loss(&batch, lambda)?;
            params[i] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(err);
            if err > REL && bad.is_none() {
                bad = Some(format!(
                    "trial {trial}: parameter {i} analytic {} vs numeric {fd}",
                    grad[i]
                ));
            }
        }
        if let Some(b) = bad {
            failures += 1;
            detail.get_or_insert(b);
        }
    }
    Ok(SuiteReport {
        name: "loss gradients vs finite differences",
        trials,
        failures,
        detail: detail.unwrap_or_else(|| format!("max relative error {worst:.3e}")),
    })
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        verify_bias_coverage(50, seed)?,
        verify_optimal_target(200, seed)?,
        verify_greedy_selection(200, seed)?,
        verify_gradients(12, seed)?,
    ])
}
