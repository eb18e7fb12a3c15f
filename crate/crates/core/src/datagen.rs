//! Datasets, synthetic generation, CSV ingestion, and the labeled/unlabeled pool.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, squared_l2};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    /// Ground truth; selection code never reads it directly, only through the oracle.
    pub label: usize,
}

/// An immutable collection of samples whose ids equal their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: usize,
    dim: usize,
}

impl Dataset {
    pub fn from_rows(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if classes == 0 {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature dimension is zero"));
        }
        let mut samples = Vec::with_capacity(features.len());
        for (id, (f, label)) in features.into_iter().zip(labels).enumerate() {
            if f.len() != dim {
                return Err(Error::invalid(format!(
                    "sample {id} has {} features, expected {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("sample {id} has a non-finite feature")));
            }
            if label >= classes {
                return Err(Error::invalid(format!(
                    "sample {id} has label {label} but there are {classes} classes"
                )));
            }
            samples.push(Sample { id, features: f, label });
        }
        Ok(Dataset { samples, classes, dim })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> Option<&Sample> {
        self.samples.get(id)
    }

    /// The simulated annotation oracle: ground-truth lookup.
    pub fn label(&self, id: usize) -> Option<usize> {
        self.samples.get(id).map(|s| s.label)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// A new dataset holding `ids` in the given order, re-indexed from zero.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            let s = self
                .sample(id)
                .ok_or_else(|| Error::invalid(format!("unknown sample id {id}")))?;
            features.push(s.features.clone());
            labels.push(s.label);
        }
        Dataset::from_rows(features, labels, self.classes)
    }
}

/// Isotropic Gaussian mixture with one unit-variance component per class.
///
/// Component means are `spread` times the first `C` rows of a seeded random
/// orthonormal basis, so every pair of means is `spread·√2` apart.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    seed: u64,
}

impl GaussianMixture {
    pub fn new(classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {classes}")));
        }
        if dim < 2 {
            return Err(Error::config(format!("need feature dimension >= 2, got {dim}")));
        }
        if classes > dim {
            return Err(Error::config(format!(
                "{classes} orthogonal class means do not fit in {dim} dimensions"
            )));
        }
        if !(spread > 0.0) || !spread.is_finite() {
            return Err(Error::config(format!("spread must be positive, got {spread}")));
        }
        let mut rng = stream(seed, Stream::MixtureMeans, 0);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
        while basis.len() < classes {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for b in &basis {
                let proj = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
            let n = norm(&v);
            if n > 1e-8 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let means = basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * spread).collect())
            .collect();
        Ok(GaussianMixture { means, seed })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Draws `per_class` points from each component; `draw` selects an
    /// independent noise stream (0 for training data, 1 for test data, ...).
    /// Sample order is shuffled so ids carry no class information.
    pub fn sample(&self, per_class: usize, draw: u64) -> Result<Dataset> {
        if per_class == 0 {
            return Err(Error::config("per_class must be at least 1"));
        }
        let mut rng = stream(self.seed, Stream::MixtureSamples, draw);
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(per_class * self.means.len());
        for (class, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                let x = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + z
                    })
                    .collect();
                rows.push((x, class));
            }
        }
        rows.shuffle(&mut rng);
        let (features, labels) = rows.into_iter().unzip();
        Dataset::from_rows(features, labels, self.means.len())
    }

    /// Nearest-mean classification, the Bayes rule for this mixture.
    pub fn nearest_mean(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, m) in self.means.iter().enumerate() {
            let d = squared_l2(x, m);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }
}

pub fn generate_gaussian_mixture(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    GaussianMixture::new(classes, dim, spread, seed)?.sample(per_class, 0)
}

/// Loads a headerless CSV of features plus a file with one integer label per line.
///
/// With `classes = None` the class count is inferred as `max label + 1`.
pub fn load_embeddings(features_path: &Path, labels_path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let features = read_float_rows(features_path, None)?;
    let labels = read_labels(labels_path)?;
    if features.len() != labels.len() {
        return Err(Error::Ingestion {
            path: labels_path.to_path_buf(),
            row: features.len().min(labels.len()),
            message: format!("{} label rows for {} feature rows", labels.len(), features.len()),
        });
    }
    let classes = match classes {
        Some(c) => {
            if let Some(row) = labels.iter().position(|l| *l >= c) {
                return Err(Error::Ingestion {
                    path: labels_path.to_path_buf(),
                    row,
                    message: format!("label {} is not below the class count {c}", labels[row]),
                });
            }
            c
        }
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    Dataset::from_rows(features, labels, classes)
}

/// Reads a headerless float CSV; every row must have the same width (or
/// `width` when given). Rows are reported by zero-based index.
pub fn read_float_rows(path: &Path, width: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    let mut expected = width;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let values = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Ingestion {
                        path: path.to_path_buf(),
                        row,
                        message: format!("cannot parse {field:?} as a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match expected {
            Some(w) if w != values.len() => {
                return Err(Error::Ingestion {
                    path: path.to_path_buf(),
                    row,
                    message: format!("ragged row: {} values, expected {w}", values.len()),
                })
            }
            None => expected = Some(values.len()),
            _ => {}
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            row: 0,
            message: "file has no rows".into(),
        });
    }
    Ok(rows)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let label = trimmed.parse::<usize>().map_err(|_| Error::Ingestion {
            path: path.to_path_buf(),
            row,
            message: format!("cannot parse {trimmed:?} as a class index"),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

/// Writes features and labels in the format [`load_embeddings`] reads.
/// Floats use the shortest representation that parses back to the same value.
pub fn write_embeddings(dataset: &Dataset, features_path: &Path, labels_path: &Path) -> Result<()> {
    let rows: Vec<&[f64]> = dataset.samples.iter().map(|s| s.features.as_slice()).collect();
    write_float_rows(features_path, &rows)?;
    let file = File::create(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let mut w = BufWriter::new(file);
    for s in &dataset.samples {
        writeln!(w, "{}", s.label).map_err(|e| Error::io(labels_path, e))?;
    }
    w.flush().map_err(|e| Error::io(labels_path, e))
}

pub fn write_float_rows(path: &Path, rows: &[&[f64]]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The labeled set D^(l) and unlabeled pool D^(u) over one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
    /// Labels revealed by the oracle; keys equal `labeled`.
    revealed: BTreeMap<usize, usize>,
    classes: usize,
    round: usize,
}

impl PoolState {
    /// Everything unlabeled.
    pub fn new(dataset: &Dataset) -> Self {
        PoolState {
            labeled: BTreeSet::new(),
            unlabeled: (0..dataset.len()).collect(),
            revealed: BTreeMap::new(),
            classes: dataset.classes(),
            round: 0,
        }
    }

    /// A pool with known labeled ids and labels, for callers that track the
    /// split themselves.
    pub fn from_parts(
        classes: usize,
        labeled: BTreeMap<usize, usize>,
        unlabeled: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let unlabeled: BTreeSet<usize> = unlabeled.into_iter().collect();
        if let Some(id) = labeled.keys().find(|id| unlabeled.contains(id)) {
            return Err(Error::protocol(format!("sample {id} is both labeled and unlabeled")));
        }
        if let Some((id, label)) = labeled.iter().find(|(_, l)| **l >= classes) {
            return Err(Error::invalid(format!(
                "sample {id} has label {label} outside {classes} classes"
            )));
        }
        Ok(PoolState {
            labeled: labeled.keys().copied().collect(),
            unlabeled,
            revealed: labeled,
            classes,
            round: 0,
        })
    }

    /// Labels `shots_per_class` uniformly chosen samples of every class.
    pub fn initial_split(dataset: &Dataset, shots_per_class: usize, seed: u64) -> Result<Self> {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes()];
        for s in dataset.samples() {
            by_class[s.label].push(s.id);
        }
        let mut rng = stream(seed, Stream::Split, 0);
        let mut pool = PoolState::new(dataset);
        let mut initial = Vec::new();
        for (class, ids) in by_class.iter_mut().enumerate() {
            if ids.len() < shots_per_class {
                return Err(Error::config(format!(
                    "class {class} has {} samples, fewer than {shots_per_class} shots",
                    ids.len()
                )));
            }
            ids.shuffle(&mut rng);
            initial.extend_from_slice(&ids[..shots_per_class]);
        }
        pool.reveal(dataset, &initial)?;
        Ok(pool)
    }

    pub fn labeled(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Label revealed for a labeled id.
    pub fn revealed_label(&self, id: usize) -> Option<usize> {
        self.revealed.get(&id).copied()
    }

    pub fn revealed(&self) -> &BTreeMap<usize, usize> {
        &self.revealed
    }

    /// Labeled-set size per class, from revealed labels.
    pub fn labeled_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &label in self.revealed.values() {
            counts[label] += 1;
        }
        counts
    }

    /// Moves `ids` from the unlabeled pool to the labeled set, revealing their
    /// labels through the oracle, and advances the round counter. Nothing is
    /// applied unless every id is valid.
    pub fn annotate(&mut self, oracle: &Dataset, ids: &[usize]) -> Result<()> {
        self.reveal(oracle, ids)?;
        self.round += 1;
        Ok(())
    }

    fn reveal(&mut self, oracle: &Dataset, ids: &[usize]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &id in ids {
            if !seen.insert(id) {
                return Err(Error::protocol(format!("sample {id} queried twice")));
            }
            if !self.unlabeled.contains(&id) {
                return Err(Error::protocol(if self.labeled.contains(&id) {
                    format!("sample {id} is already labeled")
                } else {
                    format!("sample {id} is not in the pool")
                }));
            }
        }
        for &id in ids {
            let label = oracle
                .label(id)
                .ok_or_else(|| Error::protocol(format!("oracle has no sample {id}")))?;
            self.unlabeled.remove(&id);
            self.labeled.insert(id);
            self.revealed.insert(id, label);
        }
        Ok(())
    }

    /// Caps the unlabeled pool at `max_unlabeled` by seeded uniform subsampling,
    /// returning the reduced dataset (re-indexed) and the matching pool.
    pub fn limit_unlabeled(&self, dataset: &Dataset, max_unlabeled: usize, seed: u64) -> Result<(Dataset, PoolState)> {
        if self.unlabeled.len() <= max_unlabeled {
            return Ok((dataset.clone(), self.clone()));
        }
        let mut keep: Vec<usize> = self.unlabeled.iter().copied().collect();
        let mut rng = stream(seed, Stream::Split, 1);
        keep.shuffle(&mut rng);
        keep.truncate(max_unlabeled);
        keep.sort_unstable();
        let mut order: Vec<usize> = self.labeled.iter().copied().collect();
        order.extend(keep);
        order.sort_unstable();
        let reduced = dataset.subset(&order)?;
        let mut pool = PoolState::new(&reduced);
        let relabeled: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, old)| self.labeled.contains(old))
            .map(|(new, _)| new)
            .collect();
        pool.reveal(&reduced, &relabeled)?;
        pool.round = self.round;
        Ok((reduced, pool))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn smallest_mixture() {
        let d = generate_gaussian_mixture(2, 1, 2, 1.0, 42).unwrap();
        assert_eq!(d.len(), 2);
        let mut labels: Vec<usize> = d.samples().iter().map(|s| s.label).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 1]);
    }

    #[test]
    fn mixture_is_deterministic() {
        let a = generate_gaussian_mixture(3, 20, 5, 2.0, 9).unwrap();
        let b = generate_gaussian_mixture(3, 20, 5, 2.0, 9).unwrap();
        let c = generate_gaussian_mixture(3, 20, 5, 2.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn wide_spread_is_separable_by_nearest_mean() {
        let model = GaussianMixture::new(5, 8, 50.0, 3).unwrap();
        let d = model.sample(100, 0).unwrap();
        let correct = d
            .samples()
            .iter()
            .filter(|s| model.nearest_mean(&s.features) == s.label)
            .count();
        assert!(correct as f64 / d.len() as f64 >= 0.99);
    }

    #[test]
    fn mixture_rejects_bad_sizes() {
        assert!(GaussianMixture::new(1, 4, 1.0, 0).is_err());
        assert!(GaussianMixture::new(3, 1, 1.0, 0).is_err());
        assert!(GaussianMixture::new(5, 4, 1.0, 0).is_err());
        assert!(GaussianMixture::new(3, 4, 0.0, 0).is_err());
        assert!(generate_gaussian_mixture(3, 0, 4, 1.0, 0).is_err());
    }

    #[test]
    fn load_three_rows() {
        let dir = tempdir().unwrap();
        let f = dir.path().join("x.csv");
        let l = dir.path().join("y.txt");
        std::fs::write(&f, "1.0,2.0\n3.5,-1\n0,0.25\n").unwrap();
        std::fs::write(&l, "0\n1\n1\n").unwrap();
        let d = load_embeddings(&f, &l, None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.classes(), 2);
        assert_eq!(d.sample(1).unwrap().features, vec![3.5, -1.0]);
    }

    #[test]
    fn ragged_row_is_reported() {
        let dir = tempdir().unwrap();
        let f = dir.path().join("x.csv");
        let l = dir.path().join("y.txt");
        std::fs::write(&f, "1.0,2.0\n3.5\n0,0.25\n").unwrap();
        std::fs::write(&l, "0\n1\n1\n").unwrap();
        match load_embeddings(&f, &l, None) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_and_missing_file() {
        let dir = tempdir().unwrap();
        let f = dir.path().join("x.csv");
        let l = dir.path().join("y.txt");
        std::fs::write(&f, "1,2\n3,4\n").unwrap();
        std::fs::write(&l, "0\n3\n").unwrap();
        match load_embeddings(&f, &l, Some(3)) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected ingestion error, got {other:?}"),
        }
        assert!(matches!(
            load_embeddings(&dir.path().join("nope.csv"), &l, None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_load_is_exact() {
        let dir = tempdir().unwrap();
        let f = dir.path().join("x.csv");
        let l = dir.path().join("y.txt");
        let d = generate_gaussian_mixture(3, 7, 4, 1.3, 5).unwrap();
        write_embeddings(&d, &f, &l).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        let back = load_embeddings(&f, &l, Some(3)).unwrap();
        assert_eq!(back, d);
        write_embeddings(&back, &f, &l).unwrap();
        assert_eq!(std::fs::read_to_string(&f).unwrap(), text);
    }

    #[test]
    fn one_shot_split() {
        let d = generate_gaussian_mixture(5, 10, 6, 1.0, 1).unwrap();
        let pool = PoolState::initial_split(&d, 1, 11).unwrap();
        assert_eq!(pool.labeled().len(), 5);
        assert_eq!(pool.labeled_class_counts(), vec![1; 5]);
        assert_eq!(pool.unlabeled().len(), 45);
        assert_eq!(pool, PoolState::initial_split(&d, 1, 11).unwrap());
    }

    #[test]
    fn full_shot_split_empties_pool() {
        let d = generate_gaussian_mixture(3, 4, 4, 1.0, 1).unwrap();
        let pool = PoolState::initial_split(&d, 4, 0).unwrap();
        assert!(pool.unlabeled().is_empty());
        assert!(matches!(PoolState::initial_split(&d, 5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn annotate_moves_and_rejects() {
        let d = generate_gaussian_mixture(2, 5, 2, 1.0, 1).unwrap();
        let mut pool = PoolState::initial_split(&d, 1, 0).unwrap();
        let id = *pool.unlabeled().iter().next().unwrap();
        pool.annotate(&d, &[id]).unwrap();
        assert_eq!(pool.labeled().len(), 3);
        assert_eq!(pool.unlabeled().len(), 7);
        assert_eq!(pool.revealed_label(id), d.label(id));
        assert_eq!(pool.round(), 1);

        let other = *pool.unlabeled().iter().next().unwrap();
        let before = pool.clone();
        assert!(matches!(pool.annotate(&d, &[other, other]), Err(Error::Protocol(_))));
        assert!(matches!(pool.annotate(&d, &[id]), Err(Error::Protocol(_))));
        assert!(matches!(pool.annotate(&d, &[999]), Err(Error::Protocol(_))));
        assert_eq!(pool, before);
    }

    #[test]
    fn limit_unlabeled_keeps_labeled() {
        let d = generate_gaussian_mixture(3, 30, 4, 1.0, 2).unwrap();
        let pool = PoolState::initial_split(&d, 2, 5).unwrap();
        let (small, small_pool) = pool.limit_unlabeled(&d, 10, 5).unwrap();
        assert_eq!(small.len(), 16);
        assert_eq!(small_pool.labeled().len(), 6);
        assert_eq!(small_pool.unlabeled().len(), 10);
        assert_eq!(small_pool.labeled_class_counts(), vec![2, 2, 2]);
    }

    proptest! {
        #[test]
        fn partition_survives_random_queries(seed in 0u64..500, steps in prop::collection::vec(1usize..4, 1..8)) {
            let d = generate_gaussian_mixture(3, 6, 4, 1.0, seed).unwrap();
            let mut pool = PoolState::initial_split(&d, 1, seed).unwrap();
            for q in steps {
                let ids: Vec<usize> = pool.unlabeled().iter().copied().take(q).collect();
                pool.annotate(&d, &ids).unwrap();
                prop_assert!(pool.labeled().is_disjoint(pool.unlabeled()));
                prop_assert_eq!(pool.labeled().len() + pool.unlabeled().len(), d.len());
                for (&id, &label) in pool.revealed() {
                    prop_assert_eq!(Some(label), d.label(id));
                }
            }
        }
    }
}
