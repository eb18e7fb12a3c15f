//! Runs a config's strategy × framework × seed grid and persists the results.
//!
//! Every cell writes `rounds_{strategy}_{framework}_seed{seed}.csv` with the
//! columns of [`ROUND_COLUMNS`] in that order. After all cells finish,
//! `summary.csv` holds per-round means with 95% normal-approximation
//! half-widths over seeds, and `manifest.json` records the config hash, the
//! cell files, and timestamps. Only the manifest contains timestamps, so
//! reruns of one config produce byte-identical CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, TeacherSpec};
use crate::datagen::{load_embeddings, Dataset, GaussianMixture};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, FrameworkKind, RoundLog};
use crate::selection::Strategy;
use crate::teacher::{BiasStructure, FrozenLogits, Prototype, SyntheticBiased, TeacherKind};

pub const ROUND_COLUMNS: [&str; 14] = [
    "round",
    "n_labeled",
    "n_unlabeled",
    "chosen_ids",
    "final_loss",
    "test_accuracy",
    "teacher_accuracy",
    "knn_loss",
    "cluster_purity",
    "active_centers",
    "uncertainty",
    "class_balance",
    "feature_diversity",
    "prob_diversity",
];

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One row of a round-log CSV. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Ids separated by `;`.
    pub chosen_ids: String,
    pub final_loss: f64,
    pub test_accuracy: f64,
    pub teacher_accuracy: Option<f64>,
    pub knn_loss: Option<f64>,
    pub cluster_purity: f64,
    pub active_centers: Option<usize>,
    pub uncertainty: f64,
    pub class_balance: f64,
    pub feature_diversity: f64,
    pub prob_diversity: f64,
}

impl From<&RoundLog> for RoundRecord {
    fn from(log: &RoundLog) -> Self {
        RoundRecord {
            round: log.round,
            n_labeled: log.n_labeled,
            n_unlabeled: log.n_unlabeled,
            chosen_ids: log
                .chosen_ids
                .iter()
                .map(|id| id.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            final_loss: log.final_loss(),
            test_accuracy: log.test_accuracy,
            teacher_accuracy: log.teacher_accuracy,
            knn_loss: log.knn_loss,
            cluster_purity: log.cluster_purity,
            active_centers: log.active_centers,
            uncertainty: log.criteria.uncertainty,
            class_balance: log.criteria.class_balance,
            feature_diversity: log.criteria.feature_diversity,
            prob_diversity: log.criteria.prob_diversity,
        }
    }
}

impl RoundRecord {
    /// Named numeric metric, `None` when the column is empty or unknown.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "final_loss" => Some(self.final_loss),
            "test_accuracy" => Some(self.test_accuracy),
            "teacher_accuracy" => self.teacher_accuracy,
            "knn_loss" => self.knn_loss,
            "cluster_purity" => Some(self.cluster_purity),
            "active_centers" => self.active_centers.map(|v| v as f64),
            "uncertainty" => Some(self.uncertainty),
            "class_balance" => Some(self.class_balance),
            "feature_diversity" => Some(self.feature_diversity),
            "prob_diversity" => Some(self.prob_diversity),
            _ => None,
        }
    }
}

pub fn write_round_logs(path: &Path, logs: &[RoundLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for log in logs {
        w.serialize(RoundRecord::from(log))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_round_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(ROUND_COLUMNS) {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            row: 0,
            message: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn cell_file_name(strategy: Strategy, framework: FrameworkKind, seed: u64) -> String {
    format!("rounds_{strategy}_{framework}_seed{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub strategy: Strategy,
    pub framework: FrameworkKind,
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub status: CellStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub started_unix_secs: u64,
    pub finished_unix_secs: u64,
    pub summary: PathBuf,
    pub cells: Vec<CellEntry>,
}

impl RunManifest {
    pub fn failed(&self) -> Vec<&CellEntry> {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).collect()
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The training pool and test set a config describes.
pub fn build_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetSpec::GaussianMixture {
            classes,
            dim,
            per_class,
            test_per_class,
            spread,
            seed,
        } => {
            let mixture = GaussianMixture::new(*classes, *dim, *spread, *seed)?;
            Ok((mixture.sample(*per_class, 0)?, mixture.sample(*test_per_class, 1)?))
        }
        DatasetSpec::Embeddings {
            features_path,
            labels_path,
            test_features_path,
            test_labels_path,
            classes,
        } => {
            let train = load_embeddings(features_path, labels_path, *classes)?;
            let test = load_embeddings(test_features_path, test_labels_path, Some(train.classes()))?;
            Ok((train, test))
        }
    }
}

pub fn build_teacher(config: &ExperimentConfig, classes: usize) -> Result<TeacherKind> {
    match &config.teacher {
        TeacherSpec::SyntheticBiased {
            clusters,
            confidence,
            skew,
            radius,
            seed,
            assignment,
        } => {
            let bias = BiasStructure::skewed(classes, clusters.unwrap_or(classes), *confidence, *skew, *radius, *seed)?;
            let teacher = match assignment {
                Some(a) => SyntheticBiased::with_assignment(bias, a.clone(), *seed)?,
                None => SyntheticBiased::new(bias, *seed),
            };
            Ok(TeacherKind::SyntheticBiased(teacher))
        }
        TeacherSpec::FrozenLogits { logits_path } => Ok(TeacherKind::FrozenLogits(FrozenLogits::load(
            logits_path,
            config.distill.zeta,
        )?)),
        TeacherSpec::Prototype => Ok(TeacherKind::Prototype(Prototype::new(classes, config.distill.zeta)?)),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs every cell on up to `workers` threads, writes the per-cell CSVs, the
/// summary, and the manifest into `config.output_dir`. A failing cell is
/// recorded in the manifest and does not stop the others.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<RunManifest> {
    config.validate()?;
    let started = unix_now();
    let (train, test) = build_datasets(config)?;
    let teacher = build_teacher(config, train.classes())?;
    let loop_config = config.loop_config(train.classes());
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut cells: Vec<(Strategy, FrameworkKind, u64)> = Vec::new();
    for &s in &config.strategies {
        for &f in &config.frameworks {
            for &seed in &config.seeds {
                cells.push((s, f, seed));
            }
        }
    }
    cells.sort();

    let run_cell = |&(strategy, framework, seed): &(Strategy, FrameworkKind, u64)| -> CellEntry {
        let name = cell_file_name(strategy, framework, seed);
        let outcome = run_experiment(&train, &test, &teacher, strategy, framework, &loop_config, seed)
            .and_then(|logs| write_round_logs(&out.join(&name), &logs));
        CellEntry {
            strategy,
            framework,
            seed,
            path: PathBuf::from(name),
            status: if outcome.is_ok() {
                CellStatus::Ok
            } else {
                CellStatus::Failed
            },
            error: outcome.err().map(|e| e.to_string()),
        }
    };
    let entries: Vec<CellEntry> = if workers <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };

    let summary = out.join(SUMMARY_FILE);
    write_summary(&summary, out, &entries)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        started_unix_secs: started,
        finished_unix_secs: unix_now(),
        summary: PathBuf::from(SUMMARY_FILE),
        cells: entries,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Metrics aggregated in the summary, in output order.
pub const SUMMARY_METRICS: [&str; 9] = [
    "test_accuracy",
    "teacher_accuracy",
    "knn_loss",
    "cluster_purity",
    "active_centers",
    "uncertainty",
    "class_balance",
    "feature_diversity",
    "prob_diversity",
];

/// Mean and 95% normal-approximation half-width `1.96·s/√n` with the `n − 1`
/// standard deviation; the half-width is `None` for fewer than two values.
pub fn mean_ci(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, Some(1.96 * var.sqrt() / n.sqrt())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub framework: FrameworkKind,
    pub round: usize,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_half_width: Option<f64>,
}

/// Aggregates over seeds from the cell CSVs on disk.
pub fn summarize(dir: &Path, cells: &[CellEntry]) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(Strategy, FrameworkKind), Vec<Vec<RoundRecord>>> = BTreeMap::new();
    for cell in cells.iter().filter(|c| c.status == CellStatus::Ok) {
        groups
            .entry((cell.strategy, cell.framework))
            .or_default()
            .push(read_round_records(&dir.join(&cell.path))?);
    }
    let mut rows = Vec::new();
    for ((strategy, framework), runs) in groups {
        let rounds = runs.iter().map(|r| r.len()).max().unwrap_or(0);
        for round in 1..=rounds {
            for metric in SUMMARY_METRICS {
                let values: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.iter().find(|rec| rec.round == round))
                    .filter_map(|rec| rec.metric(metric))
                    .collect();
                if let Some((mean, ci_half_width)) = mean_ci(&values) {
                    rows.push(SummaryRow {
                        strategy,
                        framework,
                        round,
                        metric: metric.to_string(),
                        n: values.len(),
                        mean,
                        ci_half_width,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn write_summary(path: &Path, dir: &Path, cells: &[CellEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in summarize(dir, cells)? {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Accuracy,
    Criteria,
    Knn,
    Purity,
}

impl PlotKind {
    pub fn metrics(&self) -> &'static [&'static str] {
        match self {
            PlotKind::Accuracy => &["test_accuracy"],
            PlotKind::Criteria => &["uncertainty", "class_balance", "feature_diversity", "prob_diversity"],
            PlotKind::Knn => &["knn_loss"],
            PlotKind::Purity => &["cluster_purity"],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::Accuracy => "accuracy",
            PlotKind::Criteria => "criteria",
            PlotKind::Knn => "knn",
            PlotKind::Purity => "purity",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PlotKind::Accuracy, PlotKind::Criteria, PlotKind::Knn, PlotKind::Purity]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown export kind {s:?}; expected accuracy | criteria | knn | purity"
                ))
            })
    }
}

/// Writes `plot_{kind}.csv` next to the manifest in long format
/// (`round,strategy,framework,seed,metric,value`). Values are copied from
/// the cell CSVs as text; empty cells are skipped.
pub fn export_plotdata(manifest_path: &Path, kind: PlotKind) -> Result<PathBuf> {
    let manifest = RunManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let cells: Vec<&CellEntry> = manifest.cells.iter().filter(|c| c.status == CellStatus::Ok).collect();
    let missing: Vec<String> = cells
        .iter()
        .map(|c| dir.join(&c.path))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    let out = dir.join(format!("plot_{}.csv", kind.name()));
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["round", "strategy", "framework", "seed", "metric", "value"])?;
    for cell in cells {
        let path = dir.join(&cell.path);
        let mut r = csv::Reader::from_path(&path)?;
        let headers = r.headers()?.clone();
        let column = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingestion {
                path: path.clone(),
                row: 0,
                message: format!("missing column {name}"),
            })
        };
        let round_col = column("round")?;
        let metric_cols = kind
            .metrics()
            .iter()
            .map(|m| Ok((*m, column(m)?)))
            .collect::<Result<Vec<_>>>()?;
        let seed = cell.seed.to_string();
        for row in r.records() {
            let row = row?;
            for (metric, col) in &metric_cols {
                let value = &row[*col];
                if value.is_empty() {
                    continue;
                }
                w.write_record([
                    &row[round_col],
                    cell.strategy.name(),
                    cell.framework.name(),
                    &seed,
                    metric,
                    value,
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    Ok(out)
}
