//! Experiment configuration files.
//!
//! A config is TOML with a handful of top-level keys and the sections
//! `[dataset]`, `[teacher]`, `[loop]`, `[student]`, and `[distill]`. Only the
//! dataset and the strategy list are required:
//!
//! ```toml
//! strategies = ["pcoreset", "random"]
//!
//! [dataset]
//! kind = "gaussian_mixture"
//! classes = 10
//! dim = 16
//! ```
//!
//! Unknown keys are rejected with a suggestion, and every range violation is
//! reported at once.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiment::{FrameworkKind, LoopConfig, PuritySet};
use crate::metrics::DEFAULT_EPSILON_THRESHOLD;
use crate::selection::Strategy;
use crate::student::{FeatureMap, Heads, TrainConfig, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_ETA, DEFAULT_LAMBDA};
use crate::teacher::DEFAULT_ZETA;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    GaussianMixture {
        classes: usize,
        dim: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
        seed: u64,
    },
    Embeddings {
        features_path: PathBuf,
        labels_path: PathBuf,
        test_features_path: PathBuf,
        test_labels_path: PathBuf,
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSpec {
    SyntheticBiased {
        /// `None` means one cluster per class.
        clusters: Option<usize>,
        confidence: f64,
        skew: f64,
        radius: f64,
        seed: u64,
        /// Cluster per class; `None` maps class `c` to cluster `c mod K`.
        assignment: Option<Vec<usize>>,
    },
    FrozenLogits {
        logits_path: PathBuf,
    },
    Prototype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub feature_map: FeatureMap,
    pub heads: Heads,
    pub epochs: usize,
    pub learning_rate: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSpec {
    pub lambda: f64,
    pub eta: f64,
    pub zeta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub rounds: usize,
    /// `None` means one query per class.
    pub query: Option<usize>,
    pub shots: usize,
    pub warm_start: bool,
    pub final_round_epochs: Option<usize>,
    pub max_unlabeled: Option<usize>,
    pub teacher_clusters: Option<usize>,
    /// Score KNN loss against the teacher's known bias balls instead of
    /// k-means centroids fitted to its predictions.
    #[serde(default)]
    pub use_true_centroids: bool,
    #[serde(default)]
    pub purity_set: PuritySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub teacher: TeacherSpec,
    pub strategies: Vec<Strategy>,
    pub frameworks: Vec<FrameworkKind>,
    pub seeds: Vec<u64>,
    #[serde(rename = "loop")]
    pub loop_spec: LoopSpec,
    pub student: StudentSpec,
    pub distill: DistillSpec,
    /// Where `run` writes its files; not part of the config hash.
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSpec::GaussianMixture { classes, .. } => Some(*classes),
            DatasetSpec::Embeddings { classes, .. } => *classes,
        }
    }

    /// Driver settings for a dataset with `classes` classes.
    pub fn loop_config(&self, classes: usize) -> LoopConfig {
        let s = &self.student;
        let d = &self.distill;
        let l = &self.loop_spec;
        LoopConfig {
            rounds: l.rounds,
            query: l.query.unwrap_or(classes),
            shots: l.shots,
            feature_map: s.feature_map,
            heads: s.heads,
            eta: d.eta,
            alpha: d.alpha,
            beta: d.beta,
            train: TrainConfig {
                lambda: d.lambda,
                learning_rate: s.learning_rate,
                epochs: s.epochs,
                labeled_batch: s.labeled_batch,
                unlabeled_batch: s.unlabeled_batch,
                seed: 0,
            },
            final_round_epochs: l.final_round_epochs,
            warm_start: l.warm_start,
            epsilon_threshold: d.epsilon_threshold,
            teacher_clusters: l.teacher_clusters,
            use_true_centroids: l.use_true_centroids,
            purity_set: l.purity_set,
            max_unlabeled: l.max_unlabeled,
        }
    }

    /// SHA-256 over the canonical JSON form, excluding `output_dir`. Key
    /// order in the source file does not matter.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// Range and consistency checks; every violation is reported.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errors.push(msg);
            }
        };
        let d = &self.distill;
        check(
            (0.0..=1.0).contains(&d.lambda),
            format!("distill.lambda must lie in [0, 1], got {}", d.lambda),
        );
        check(
            (0.0..=1.0).contains(&d.alpha),
            format!("distill.alpha must lie in [0, 1], got {}", d.alpha),
        );
        for (name, v) in [("eta", d.eta), ("zeta", d.zeta), ("beta", d.beta)] {
            check(v > 0.0 && v.is_finite(), format!("distill.{name} must be > 0, got {v}"));
        }
        check(
            d.epsilon_threshold >= 0.0,
            format!("distill.epsilon_threshold must be >= 0, got {}", d.epsilon_threshold),
        );
        let s = &self.student;
        check(s.epochs >= 1, "student.epochs must be >= 1".into());
        check(
            s.learning_rate > 0.0 && s.learning_rate.is_finite(),
            format!("student.learning_rate must be > 0, got {}", s.learning_rate),
        );
        check(s.labeled_batch >= 1, "student.labeled_batch must be >= 1".into());
        check(s.unlabeled_batch >= 1, "student.unlabeled_batch must be >= 1".into());
        if let FeatureMap::Linear { hidden } | FeatureMap::Mlp1 { hidden } = s.feature_map {
            check(hidden >= 1, "student.hidden must be >= 1".into());
        }
        let l = &self.loop_spec;
        check(l.rounds >= 1, "loop.rounds must be >= 1".into());
        check(l.query != Some(0), "loop.query must be >= 1".into());
        check(l.shots >= 1, "loop.shots must be >= 1".into());
        check(
            l.final_round_epochs != Some(0),
            "loop.final_round_epochs must be >= 1".into(),
        );
        check(
            l.teacher_clusters != Some(0),
            "loop.teacher_clusters must be >= 1".into(),
        );
        check(
            !l.use_true_centroids || matches!(self.teacher, TeacherSpec::SyntheticBiased { .. }),
            "loop.use_true_centroids needs teacher.kind = \"synthetic_biased\"".into(),
        );
        check(!self.strategies.is_empty(), "strategies must not be empty".into());
        check(!self.frameworks.is_empty(), "frameworks must not be empty".into());
        check(!self.seeds.is_empty(), "seeds must not be empty".into());
        for (what, n, unique) in [
            (
                "strategies",
                self.strategies.len(),
                self.strategies.iter().collect::<BTreeSet<_>>().len(),
            ),
            (
                "frameworks",
                self.frameworks.len(),
                self.frameworks.iter().collect::<BTreeSet<_>>().len(),
            ),
            (
                "seeds",
                self.seeds.len(),
                self.seeds.iter().collect::<BTreeSet<_>>().len(),
            ),
        ] {
            check(n == unique, format!("{what} contains duplicates"));
        }

        match &self.dataset {
            DatasetSpec::GaussianMixture {
                classes,
                dim,
                per_class,
                test_per_class,
                spread,
                ..
            } => {
                check(*classes >= 2, format!("dataset.classes must be >= 2, got {classes}"));
                check(*dim >= 2, format!("dataset.dim must be >= 2, got {dim}"));
                check(
                    classes <= dim,
                    format!("dataset.classes ({classes}) must not exceed dataset.dim ({dim})"),
                );
                check(*test_per_class >= 1, "dataset.test_per_class must be >= 1".into());
                check(*spread > 0.0, format!("dataset.spread must be > 0, got {spread}"));
                check(
                    *per_class >= l.shots,
                    format!(
                        "dataset.per_class ({per_class}) is smaller than loop.shots ({})",
                        l.shots
                    ),
                );
                let pool = classes * per_class.saturating_sub(l.shots);
                let pool = l.max_unlabeled.map_or(pool, |m| m.min(pool));
                let budget = l.query.unwrap_or(*classes) * l.rounds;
                check(
                    budget <= pool,
                    format!("loop.query x loop.rounds = {budget} exceeds the {pool} initially unlabeled samples"),
                );
            }
            DatasetSpec::Embeddings {
                features_path,
                labels_path,
                test_features_path,
                test_labels_path,
                classes,
            } => {
                for p in [features_path, labels_path, test_features_path, test_labels_path] {
                    check(p.is_file(), format!("dataset file {} does not exist", p.display()));
                }
                check(classes.is_none_or(|c| c >= 2), "dataset.classes must be >= 2".into());
            }
        }
        match &self.teacher {
            TeacherSpec::SyntheticBiased {
                clusters,
                confidence,
                radius,
                skew,
                assignment,
                ..
            } => {
                check(*clusters != Some(0), "teacher.clusters must be >= 1".into());
                check(
                    (0.0..=1.0).contains(confidence),
                    format!("teacher.confidence must lie in [0, 1], got {confidence}"),
                );
                check(
                    *radius >= 0.0 && radius.is_finite(),
                    format!("teacher.radius must be >= 0, got {radius}"),
                );
                check(skew.is_finite(), "teacher.skew must be finite".into());
                if let (Some(a), Some(c)) = (assignment, self.classes()) {
                    check(
                        a.len() == c,
                        format!("teacher.assignment has {} entries for {c} classes", a.len()),
                    );
                    let k = clusters.unwrap_or(c);
                    check(
                        a.iter().all(|x| *x < k),
                        format!("teacher.assignment names a cluster >= {k}"),
                    );
                }
                check(
                    !self.frameworks.contains(&FrameworkKind::FewShotDistill),
                    "framework few_shot needs teacher.kind = \"prototype\"".into(),
                );
            }
            TeacherSpec::FrozenLogits { logits_path } => {
                check(
                    logits_path.is_file(),
                    format!("teacher file {} does not exist", logits_path.display()),
                );
                check(
                    !self.frameworks.contains(&FrameworkKind::FewShotDistill),
                    "framework few_shot needs teacher.kind = \"prototype\"".into(),
                );
            }
            TeacherSpec::Prototype => check(
                !self.frameworks.contains(&FrameworkKind::ZeroShotDistill),
                "a prototype teacher has no predictions before adaptation; use framework few_shot".into(),
            ),
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "strategies",
    "frameworks",
    "seeds",
    "output_dir",
    "dataset",
    "teacher",
    "loop",
    "student",
    "distill",
];
const DATASET_KEYS: &[&str] = &[
    "kind",
    "classes",
    "dim",
    "per_class",
    "test_per_class",
    "spread",
    "seed",
    "features_path",
    "labels_path",
    "test_features_path",
    "test_labels_path",
];
const TEACHER_KEYS: &[&str] = &[
    "kind",
    "clusters",
    "confidence",
    "skew",
    "radius",
    "seed",
    "assignment",
    "logits_path",
];
const LOOP_KEYS: &[&str] = &[
    "rounds",
    "query",
    "shots",
    "warm_start",
    "final_round_epochs",
    "max_unlabeled",
    "teacher_clusters",
    "use_true_centroids",
    "purity_set",
];
const STUDENT_KEYS: &[&str] = &[
    "feature_map",
    "hidden",
    "heads",
    "epochs",
    "learning_rate",
    "labeled_batch",
    "unlabeled_batch",
];
const DISTILL_KEYS: &[&str] = &["lambda", "eta", "zeta", "alpha", "beta", "epsilon_threshold"];

/// Closest known key by Jaro-Winkler similarity, if reasonably close.
fn closest<'a>(key: &str, known: &[&'a str]) -> Option<&'a str> {
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(score, _)| *score >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

/// Typed reads from one table, collecting every problem.
struct Reader<'a> {
    section: &'static str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
}

impl<'a> Reader<'a> {
    fn new(section: &'static str, table: Option<&'a Table>, known: &[&str], errors: &'a mut Vec<String>) -> Self {
        if let Some(t) = table {
            for key in t.keys() {
                if !known.contains(&key.as_str()) {
                    let place = if section.is_empty() {
                        format!("unknown key `{key}`")
                    } else {
                        format!("unknown key `{key}` in [{section}]")
                    };
                    errors.push(match closest(key, known) {
                        Some(k) => format!("{place}; did you mean `{k}`?"),
                        None => place,
                    });
                }
            }
        }
        Reader { section, table, errors }
    }

    fn name(&self, key: &str) -> String {
        if self.section.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.section)
        }
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn wrong_type(&mut self, key: &str, expected: &str) {
        let name = self.name(key);
        self.errors.push(format!("{name} must be {expected}"));
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.raw(key) {
            None => default,
            Some(Value::Float(f)) => *f,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.wrong_type(key, "a number");
                default
            }
        }
    }

    fn opt_int(&mut self, key: &str) -> Option<u64> {
        match self.raw(key) {
            None => None,
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(_) => {
                self.wrong_type(key, "a non-negative integer");
                None
            }
        }
    }

    fn int(&mut self, key: &str, default: u64) -> u64 {
        self.opt_int(key).unwrap_or(default)
    }

    fn count(&mut self, key: &str, default: usize) -> usize {
        self.int(key, default as u64) as usize
    }

    fn opt_count(&mut self, key: &str) -> Option<usize> {
        self.opt_int(key).map(|v| v as usize)
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.wrong_type(key, "true or false");
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<&'a str> {
        match self.raw(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.wrong_type(key, "a string");
                None
            }
        }
    }

    fn required_string(&mut self, key: &str) -> Option<&'a str> {
        let s = self.string(key);
        if s.is_none() && self.raw(key).is_none() {
            let name = self.name(key);
            self.errors.push(format!("{name} is required"));
        }
        s
    }

    fn path(&mut self, key: &str, base: &Path) -> PathBuf {
        match self.required_string(key) {
            Some(s) => base.join(s),
            None => PathBuf::new(),
        }
    }

    fn list(&mut self, key: &str) -> Option<&'a Vec<Value>> {
        match self.raw(key) {
            None => None,
            Some(Value::Array(a)) => Some(a),
            Some(_) => {
                self.wrong_type(key, "an array");
                None
            }
        }
    }

    fn int_list(&mut self, key: &str) -> Option<Vec<u64>> {
        let items = self.list(key)?;
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            match v {
                Value::Integer(i) if *i >= 0 => out.push(*i as u64),
                _ => {
                    self.wrong_type(key, "an array of non-negative integers");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&mut self, key: &str) -> Option<T> {
        match self.string(key)?.parse::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                let name = self.name(key);
                self.errors.push(format!("{name}: {}", strip_prefix(&e)));
                None
            }
        }
    }

    fn parsed_list<T: std::str::FromStr<Err = Error>>(&mut self, key: &str) -> Option<Vec<T>> {
        let items = self.list(key)?;
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            match v.as_str().map(str::parse::<T>) {
                Some(Ok(x)) => out.push(x),
                Some(Err(e)) => {
                    let name = self.name(key);
                    self.errors.push(format!("{name}: {}", strip_prefix(&e)));
                }
                None => self.wrong_type(key, "an array of strings"),
            }
        }
        Some(out)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn sub_table<'a>(root: &'a Table, key: &str, errors: &mut Vec<String>) -> Option<&'a Table> {
    match root.get(key) {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            errors.push(format!("`{key}` must be a table"));
            None
        }
    }
}

/// Parses config text. Relative paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let mut errors = Vec::new();

    let dataset_t = sub_table(&root, "dataset", &mut errors);
    let teacher_t = sub_table(&root, "teacher", &mut errors);
    let loop_t = sub_table(&root, "loop", &mut errors);
    let student_t = sub_table(&root, "student", &mut errors);
    let distill_t = sub_table(&root, "distill", &mut errors);

    let mut top = Reader::new("", Some(&root), TOP_KEYS, &mut errors);
    let strategies = top.parsed_list::<Strategy>("strategies");
    if top.raw("strategies").is_none() {
        top.errors.push("strategies is required".into());
    }
    let frameworks = top
        .parsed_list::<FrameworkKind>("frameworks")
        .unwrap_or_else(|| vec![FrameworkKind::ZeroShotDistill]);
    let seeds = top.int_list("seeds").unwrap_or_else(|| vec![0]);
    let output_dir = base.join(top.string("output_dir").unwrap_or("runs"));

    if dataset_t.is_none() && !root.contains_key("dataset") {
        errors.push("[dataset] is required".into());
    }
    let mut ds = Reader::new("dataset", dataset_t, DATASET_KEYS, &mut errors);
    let dataset = match ds.string("kind").unwrap_or("gaussian_mixture") {
        "gaussian_mixture" => DatasetSpec::GaussianMixture {
            classes: ds.count("classes", 10),
            dim: ds.count("dim", 16),
            per_class: ds.count("per_class", 200),
            test_per_class: ds.count("test_per_class", 100),
            spread: ds.float("spread", 3.0),
            seed: ds.int("seed", 0),
        },
        "embeddings" => DatasetSpec::Embeddings {
            features_path: ds.path("features_path", base),
            labels_path: ds.path("labels_path", base),
            test_features_path: ds.path("test_features_path", base),
            test_labels_path: ds.path("test_labels_path", base),
            classes: ds.opt_count("classes"),
        },
        other => {
            ds.errors.push(format!(
                "dataset.kind {other:?} is not one of gaussian_mixture | embeddings"
            ));
            DatasetSpec::GaussianMixture {
                classes: 10,
                dim: 16,
                per_class: 200,
                test_per_class: 100,
                spread: 3.0,
                seed: 0,
            }
        }
    };

    let mut te = Reader::new("teacher", teacher_t, TEACHER_KEYS, &mut errors);
    let teacher = match te.string("kind").unwrap_or("synthetic_biased") {
        "synthetic_biased" => TeacherSpec::SyntheticBiased {
            clusters: te.opt_count("clusters"),
            confidence: te.float("confidence", 0.5),
            skew: te.float("skew", 1.0),
            radius: te.float("radius", 0.1),
            seed: te.int("seed", 0),
            assignment: te
                .int_list("assignment")
                .map(|v| v.into_iter().map(|x| x as usize).collect()),
        },
        "frozen_logits" => TeacherSpec::FrozenLogits {
            logits_path: te.path("logits_path", base),
        },
        "prototype" => TeacherSpec::Prototype,
        other => {
            te.errors.push(format!(
                "teacher.kind {other:?} is not one of synthetic_biased | frozen_logits | prototype"
            ));
            TeacherSpec::Prototype
        }
    };

    let mut lo = Reader::new("loop", loop_t, LOOP_KEYS, &mut errors);
    let loop_spec = LoopSpec {
        rounds: lo.count("rounds", 16),
        query: lo.opt_count("query"),
        shots: lo.count("shots", 1),
        warm_start: lo.boolean("warm_start", false),
        final_round_epochs: lo.opt_count("final_round_epochs"),
        max_unlabeled: lo.opt_count("max_unlabeled"),
        teacher_clusters: lo.opt_count("teacher_clusters"),
        use_true_centroids: lo.boolean("use_true_centroids", false),
        purity_set: lo.parsed("purity_set").unwrap_or_default(),
    };

    let defaults = TrainConfig::default();
    let mut st = Reader::new("student", student_t, STUDENT_KEYS, &mut errors);
    let hidden = st.count("hidden", 32);
    let feature_map = match st.string("feature_map").unwrap_or("identity") {
        "identity" => FeatureMap::Identity,
        "linear" => FeatureMap::Linear { hidden },
        "mlp1" => FeatureMap::Mlp1 { hidden },
        other => {
            st.errors.push(format!(
                "student.feature_map {other:?} is not one of identity | linear | mlp1"
            ));
            FeatureMap::Identity
        }
    };
    let heads = match st.string("heads").unwrap_or("dual") {
        "dual" => Heads::Dual,
        "single" => Heads::Single,
        other => {
            st.errors
                .push(format!("student.heads {other:?} is not one of dual | single"));
            Heads::Dual
        }
    };
    let student = StudentSpec {
        feature_map,
        heads,
        epochs: st.count("epochs", defaults.epochs),
        learning_rate: st.float("learning_rate", defaults.learning_rate),
        labeled_batch: st.count("labeled_batch", defaults.labeled_batch),
        unlabeled_batch: st.count("unlabeled_batch", defaults.unlabeled_batch),
    };

    let mut di = Reader::new("distill", distill_t, DISTILL_KEYS, &mut errors);
    let distill = DistillSpec {
        lambda: di.float("lambda", DEFAULT_LAMBDA),
        eta: di.float("eta", DEFAULT_ETA),
        zeta: di.float("zeta", DEFAULT_ZETA),
        alpha: di.float("alpha", DEFAULT_ALPHA),
        beta: di.float("beta", DEFAULT_BETA),
        epsilon_threshold: di.float("epsilon_threshold", DEFAULT_EPSILON_THRESHOLD),
    };

    let config = ExperimentConfig {
        dataset,
        teacher,
        strategies: strategies.unwrap_or_default(),
        frameworks,
        seeds,
        loop_spec,
        student,
        distill,
        output_dir,
    };
    match config.validate() {
        Ok(()) if errors.is_empty() => Ok(config),
        Ok(()) => Err(Error::Validation(errors)),
        Err(Error::Validation(more)) => {
            errors.extend(more);
            Err(Error::Validation(errors))
        }
        Err(e) => Err(e),
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}
