//! The round-based ActiveKD driver: train, select, annotate, log.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, PoolState, Sample};
use crate::error::{Error, Result};
use crate::metrics::{
    active_centers, criteria_bundle, feature_diameter, knn_loss_fitted, knn_loss_true, prediction_purity,
    CriteriaBundle, DEFAULT_EPSILON_THRESHOLD,
};
use crate::numerics::ProbVector;
use crate::rng::{mix64, stream, Stream};
use crate::selection::{select, SelectionInput, Strategy};
use crate::student::{Architecture, FeatureMap, Heads, Predictor, Student, TrainConfig, TrainData};
use crate::teacher::{propagate_bias, Teacher};

/// Points the cluster-purity diagnostic is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuritySet {
    /// The held-out test set, identical for every strategy.
    #[default]
    Test,
    /// The current unlabeled pool, which differs by strategy.
    Unlabeled,
}

impl FromStr for PuritySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(PuritySet::Test),
            "unlabeled" => Ok(PuritySet::Unlabeled),
            _ => Err(Error::config(format!(
                "unknown purity set {s:?}; expected test | unlabeled"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameworkKind {
    /// Plain active learning: cross-entropy on labeled samples only.
    NoDistill,
    ZeroShotDistill,
    /// Distillation from a teacher re-fitted on the labeled set every round.
    FewShotDistill,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 3] = [
        FrameworkKind::NoDistill,
        FrameworkKind::ZeroShotDistill,
        FrameworkKind::FewShotDistill,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FrameworkKind::NoDistill => "no_distill",
            FrameworkKind::ZeroShotDistill => "zero_shot",
            FrameworkKind::FewShotDistill => "few_shot",
        }
    }

    pub fn distills(&self) -> bool {
        !matches!(self, FrameworkKind::NoDistill)
    }
}

impl fmt::Display for FrameworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrameworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FrameworkKind::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown framework {s:?}; expected one of no_distill | zero_shot | few_shot"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub rounds: usize,
    pub query: usize,
    pub shots: usize,
    pub feature_map: FeatureMap,
    pub heads: Heads,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub train: TrainConfig,
    /// Epochs for the last round; `None` keeps `train.epochs`.
    pub final_round_epochs: Option<usize>,
    /// Continue from the previous round's student instead of re-initializing.
    pub warm_start: bool,
    pub epsilon_threshold: f64,
    /// Cluster count for k-means over teacher predictions; `None` uses the
    /// teacher's known cluster count, or `C`.
    pub teacher_clusters: Option<usize>,
    /// Use the teacher's bias balls as KNN centroids when it has them.
    pub use_true_centroids: bool,
    pub purity_set: PuritySet,
    /// Seeded cap on the initial unlabeled pool.
    pub max_unlabeled: Option<usize>,
}

impl LoopConfig {
    /// Defaults for `C` classes: 16 rounds of `Q = C`, one shot per class.
    pub fn for_classes(classes: usize) -> Self {
        LoopConfig {
            rounds: 16,
            query: classes,
            shots: 1,
            feature_map: FeatureMap::Identity,
            heads: Heads::Dual,
            eta: crate::student::DEFAULT_ETA,
            alpha: crate::student::DEFAULT_ALPHA,
            beta: crate::student::DEFAULT_BETA,
            train: TrainConfig::default(),
            final_round_epochs: None,
            warm_start: false,
            epsilon_threshold: DEFAULT_EPSILON_THRESHOLD,
            teacher_clusters: None,
            use_true_centroids: false,
            purity_set: PuritySet::Test,
            max_unlabeled: None,
        }
    }

    fn architecture(&self, dim: usize, classes: usize) -> Architecture {
        Architecture {
            feature_map: self.feature_map,
            input_dim: dim,
            classes,
            heads: self.heads,
            eta: self.eta,
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based round index.
    pub round: usize,
    /// Pool sizes after this round's annotation.
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub chosen_ids: Vec<usize>,
    /// Mean loss per epoch while training this round's student.
    pub loss_trace: Vec<f64>,
    pub test_accuracy: f64,
    /// Accuracy of the adapted teacher on the test set (few-shot arm only).
    pub teacher_accuracy: Option<f64>,
    /// Mean distance of unlabeled predictions to their propagated centroids
    /// (distillation arms only).
    pub knn_loss: Option<f64>,
    /// Purity of a `C`-means clustering of unlabeled predictions.
    pub cluster_purity: f64,
    /// Propagated centers nearest to at least one unlabeled prediction, when
    /// the teacher's bias structure is known.
    pub active_centers: Option<usize>,
    pub criteria: CriteriaBundle,
    pub wall_time_ms: f64,
}

impl RoundLog {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Top-1 accuracy; ties in the prediction go to the lowest class.
pub fn evaluate(student: &impl Predictor, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("accuracy over an empty test set"));
    }
    let correct = test
        .iter()
        .filter(|s| student.predict(&s.features).argmax() == s.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Seed for one round's component, derived from the experiment seed.
fn round_seed(seed: u64, round: usize) -> u64 {
    mix64(seed ^ mix64(round as u64 + 1))
}

struct TeacherAccuracy<'a, T>(&'a T);

impl<T: Teacher> TeacherAccuracy<'_, T> {
    fn on(&self, test: &[Sample]) -> Result<f64> {
        let mut correct = 0;
        for s in test {
            if self.0.predict(s)?.argmax() == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.len().max(1) as f64)
    }
}

/// Runs `config.rounds` rounds of train, select, annotate. Every stochastic
/// component draws from a stream derived from `seed`, so the logs are a pure
/// function of the inputs apart from `wall_time_ms`. The teacher is never
/// queried under [`FrameworkKind::NoDistill`].
pub fn run_experiment<T: Teacher + Clone>(
    dataset: &Dataset,
    test: &Dataset,
    teacher: &T,
    strategy: Strategy,
    framework: FrameworkKind,
    config: &LoopConfig,
    seed: u64,
) -> Result<Vec<RoundLog>> {
    if config.rounds == 0 || config.query == 0 {
        return Err(Error::config("rounds and query size must be at least 1"));
    }
    if framework == FrameworkKind::FewShotDistill && !teacher.is_adaptable() {
        return Err(Error::config("the few-shot framework needs an adaptable teacher"));
    }
    if test.is_empty() {
        return Err(Error::config("empty test set"));
    }
    if test.dim() != dataset.dim() || test.classes() != dataset.classes() {
        return Err(Error::config("test set shape differs from the training pool"));
    }
    let classes = dataset.classes();
    let mut arch = config.architecture(dataset.dim(), classes);
    let mut train = config.train;
    if !framework.distills() {
        // cross-entropy only, and only the CE head is trained so only it is read
        train.lambda = 1.0;
        arch.alpha = 1.0;
    }
    arch.validate()?;
    train.validate()?;

    let mut pool = PoolState::initial_split(dataset, config.shots, seed)?;
    let owned;
    let dataset = match config.max_unlabeled {
        Some(max) => {
            let (reduced, limited) = pool.limit_unlabeled(dataset, max, seed)?;
            owned = reduced;
            pool = limited;
            &owned
        }
        None => dataset,
    };
    let samples = dataset.samples();
    let all_ids: Vec<usize> = (0..dataset.len()).collect();

    let mut current_teacher = teacher.clone();
    let mut teacher_preds: Option<Vec<ProbVector>> = None;
    let mut student: Option<Student> = None;
    let mut logs = Vec::with_capacity(config.rounds);
    // identity features never change, so their diameter is computed once
    let mut fixed_diameter = None;

    for round in 1..=config.rounds {
        let started = Instant::now();
        let wrap = |e: Error| Error::Run {
            round,
            source: Box::new(e),
        };
        let rseed = round_seed(seed, round);

        let mut teacher_accuracy = None;
        if framework == FrameworkKind::FewShotDistill {
            let labeled: Vec<&Sample> = pool.labeled().iter().map(|&i| &samples[i]).collect();
            current_teacher = teacher.adapted(&labeled).map_err(wrap)?;
            teacher_accuracy = Some(TeacherAccuracy(&current_teacher).on(test.samples()).map_err(wrap)?);
            teacher_preds = None;
        }
        if framework.distills() && teacher_preds.is_none() {
            teacher_preds = Some(
                samples
                    .iter()
                    .map(|s| current_teacher.predict(s))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?,
            );
        }

        let mut model = match (&student, config.warm_start) {
            (Some(prev), true) => prev.clone(),
            _ => Student::new(arch, &mut stream(seed, Stream::Init, round as u64)).map_err(wrap)?,
        };
        let targets: Option<Vec<ProbVector>> = match &teacher_preds {
            Some(preds) => Some(
                preds
                    .iter()
                    .map(|p| model.kd_target(p))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?,
            ),
            None => None,
        };
        let labeled_pairs: Vec<(usize, usize)> = pool.revealed().iter().map(|(&i, &y)| (i, y)).collect();
        let mut round_train = train;
        round_train.seed = rseed;
        if round == config.rounds {
            if let Some(e) = config.final_round_epochs {
                round_train.epochs = e;
            }
        }
        let report = model
            .train(
                &TrainData {
                    samples,
                    labeled: &labeled_pairs,
                    kd_pool: &all_ids,
                    targets: targets.as_deref(),
                },
                &round_train,
            )
            .map_err(wrap)?;
        let test_accuracy = evaluate(&model, test.samples()).map_err(wrap)?;

        let probs: Vec<ProbVector> = samples.iter().map(|s| model.infer(&s.features)).collect();
        let features: Vec<Vec<f64>> = samples.iter().map(|s| model.features(&s.features)).collect();
        let head_probs: Option<Vec<Vec<ProbVector>>> = if strategy == Strategy::Badge {
            Some(samples.iter().map(|s| model.head_probs(&s.features)).collect())
        } else {
            None
        };

        // diagnostics on the unlabeled pool, before selection
        let unlabeled: Vec<usize> = pool.unlabeled().iter().copied().collect();
        let u_probs: Vec<ProbVector> = unlabeled.iter().map(|&i| probs[i].clone()).collect();
        let u_labels: Vec<usize> = unlabeled.iter().map(|&i| samples[i].label).collect();
        let metric_seed = mix64(rseed ^ Stream::Metrics as u64);
        let cluster_purity = match config.purity_set {
            PuritySet::Unlabeled if u_probs.is_empty() => 1.0,
            PuritySet::Unlabeled => prediction_purity(&u_probs, &u_labels, classes, metric_seed).map_err(wrap)?,
            PuritySet::Test => {
                let t_probs: Vec<ProbVector> = test.samples().iter().map(|s| model.infer(&s.features)).collect();
                let t_labels: Vec<usize> = test.samples().iter().map(|s| s.label).collect();
                prediction_purity(&t_probs, &t_labels, classes, metric_seed).map_err(wrap)?
            }
        };
        let mut knn_loss = None;
        let mut centers = None;
        if let (Some(preds), false) = (&teacher_preds, u_probs.is_empty()) {
            let u_teacher: Vec<ProbVector> = unlabeled.iter().map(|&i| preds[i].clone()).collect();
            let k = config
                .teacher_clusters
                .or_else(|| current_teacher.bias().map(|b| b.clusters()))
                .unwrap_or(classes);
            let true_clusters: Option<Vec<usize>> = match current_teacher.bias() {
                Some(_) if config.use_true_centroids => unlabeled
                    .iter()
                    .map(|&i| current_teacher.bias_cluster(&samples[i]))
                    .collect(),
                _ => None,
            };
            let knn = match (current_teacher.bias(), true_clusters) {
                (Some(bias), Some(clusters)) => knn_loss_true(
                    &u_probs,
                    bias,
                    &clusters,
                    &u_labels,
                    train.lambda,
                    config.epsilon_threshold,
                ),
                _ => knn_loss_fitted(
                    &u_probs,
                    &u_teacher,
                    &u_labels,
                    k,
                    train.lambda,
                    config.epsilon_threshold,
                    metric_seed,
                ),
            }
            .map_err(wrap)?;
            knn_loss = Some(knn.mean);
            if let Some(bias) = current_teacher.bias() {
                let propagated = propagate_bias(bias, train.lambda, config.epsilon_threshold, classes).map_err(wrap)?;
                centers = Some(active_centers(&u_probs, &propagated).map_err(wrap)?);
            }
        }

        let mut input = SelectionInput::new(&pool, &probs, config.query).with_features(&features);
        if let Some(h) = &head_probs {
            input = input.with_head_probs(h);
        }
        let selection = select(strategy, &input, rseed).map_err(wrap)?;
        let diameter = match fixed_diameter {
            Some(d) => d,
            None => {
                let d = feature_diameter(&features, metric_seed);
                if arch.feature_map == FeatureMap::Identity {
                    fixed_diameter = Some(d);
                }
                d
            }
        };
        let criteria =
            criteria_bundle(&selection.chosen_ids, &pool, &probs, &features, dataset, diameter).map_err(wrap)?;
        pool.annotate(dataset, &selection.chosen_ids).map_err(wrap)?;

        logs.push(RoundLog {
            round,
            n_labeled: pool.labeled().len(),
            n_unlabeled: pool.unlabeled().len(),
            chosen_ids: selection.chosen_ids,
            loss_trace: report.loss_trace,
            test_accuracy,
            teacher_accuracy,
            knn_loss,
            cluster_purity,
            active_centers: centers,
            criteria,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        student = Some(model);
    }
    Ok(logs)
}
