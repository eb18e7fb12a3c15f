//! Query strategies `A(D^(l), D^(u), f_r; Q)`.
//!
//! Every strategy is a pure function of a [`SelectionInput`] (plus a seed for
//! the stochastic ones) and returns exactly `Q` distinct unlabeled ids. Ties
//! are always broken toward the lowest sample id.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::PoolState;
use crate::error::{Error, Result};
use crate::numerics::{norm, shannon_entropy, squared_l2, ProbVector};
use crate::rng::{stream, Stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Entropy,
    Coreset,
    #[serde(rename = "pcoreset")]
    PCoreset,
    #[serde(rename = "pcoreset_reverse")]
    PCoresetReverse,
    ClassBalanced,
    Badge,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Coreset,
        Strategy::PCoreset,
        Strategy::PCoresetReverse,
        Strategy::ClassBalanced,
        Strategy::Badge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Coreset => "coreset",
            Strategy::PCoreset => "pcoreset",
            Strategy::PCoresetReverse => "pcoreset_reverse",
            Strategy::ClassBalanced => "class_balanced",
            Strategy::Badge => "badge",
        }
    }

    pub fn needs_features(&self) -> bool {
        matches!(self, Strategy::Coreset | Strategy::Badge)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
            Error::config(format!("unknown strategy {s:?}; expected one of {}", names.join(" | ")))
        })
    }
}

/// Everything a strategy may look at. Per-sample arrays are indexed by id.
#[derive(Debug, Clone, Copy)]
pub struct SelectionInput<'a> {
    pub pool: &'a PoolState,
    /// Student predictions `f_r(x)`.
    pub probs: &'a [ProbVector],
    /// Shared features `h(x)`, required by Coreset and BADGE.
    pub features: Option<&'a [Vec<f64>]>,
    /// Per-head training distributions for BADGE (one entry per head);
    /// when absent `probs` acts as a single head.
    pub head_probs: Option<&'a [Vec<ProbVector>]>,
    pub query: usize,
}

impl<'a> SelectionInput<'a> {
    pub fn new(pool: &'a PoolState, probs: &'a [ProbVector], query: usize) -> Self {
        SelectionInput {
            pool,
            probs,
            features: None,
            head_probs: None,
            query,
        }
    }

    pub fn with_features(mut self, features: &'a [Vec<f64>]) -> Self {
        self.features = Some(features);
        self
    }

    pub fn with_head_probs(mut self, head_probs: &'a [Vec<ProbVector>]) -> Self {
        self.head_probs = Some(head_probs);
        self
    }

    fn validate(&self) -> Result<()> {
        let available = self.pool.unlabeled().len();
        if self.query == 0 || self.query > available {
            return Err(Error::Budget {
                requested: self.query,
                available,
            });
        }
        let max_id = self
            .pool
            .labeled()
            .iter()
            .chain(self.pool.unlabeled())
            .max()
            .copied()
            .unwrap_or(0);
        if max_id >= self.probs.len() {
            return Err(Error::invalid(format!("no student prediction for sample {max_id}")));
        }
        let classes = self.pool.classes();
        if self.probs.iter().any(|p| p.len() != classes) {
            return Err(Error::invalid(format!(
                "student predictions must have {classes} classes"
            )));
        }
        if let Some(f) = self.features {
            if f.len() <= max_id {
                return Err(Error::invalid(format!("no features for sample {max_id}")));
            }
        }
        if let Some(h) = self.head_probs {
            if h.len() <= max_id {
                return Err(Error::invalid(format!("no head outputs for sample {max_id}")));
            }
        }
        Ok(())
    }

    fn require_features(&self) -> Result<&'a [Vec<f64>]> {
        self.features
            .ok_or_else(|| Error::config("this strategy needs feature vectors"))
    }

    fn unlabeled(&self) -> Vec<usize> {
        self.pool.unlabeled().iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_ids: Vec<usize>,
    /// Value that decided each pick: the min-distance for the greedy
    /// strategies, the entropy for Entropy, the D² weight for BADGE, and the
    /// normalized entropy of the pick for Random and ClassBalanced.
    pub scores: Vec<f64>,
}

/// Dispatches on `strategy`. Deterministic strategies ignore `seed`.
pub fn select(strategy: Strategy, input: &SelectionInput, seed: u64) -> Result<SelectionResult> {
    match strategy {
        Strategy::Random => select_random(input, seed),
        Strategy::Entropy => select_entropy(input),
        Strategy::Coreset => select_coreset(input),
        Strategy::PCoreset => select_pcoreset(input),
        Strategy::PCoresetReverse => select_pcoreset_reverse(input),
        Strategy::ClassBalanced => select_class_balanced(input, seed),
        Strategy::Badge => select_badge(input, seed),
    }
}

/// The RNG a seeded strategy draws from.
pub fn strategy_rng(seed: u64) -> StreamRng {
    stream(seed, Stream::Strategy, 0)
}

/// Moves `k` uniformly chosen items of `items` to its front by a partial
/// Fisher-Yates pass and returns them.
fn partial_shuffle(items: &mut [usize], k: usize, rng: &mut StreamRng) -> Vec<usize> {
    for i in 0..k {
        let j = rng.random_range(i..items.len());
        items.swap(i, j);
    }
    items[..k].to_vec()
}

fn entropy_scores(input: &SelectionInput, ids: &[usize]) -> Vec<f64> {
    ids.iter().map(|&id| shannon_entropy(&input.probs[id], true)).collect()
}

pub fn select_random(input: &SelectionInput, seed: u64) -> Result<SelectionResult> {
    input.validate()?;
    let mut ids = input.unlabeled();
    let chosen = partial_shuffle(&mut ids, input.query, &mut strategy_rng(seed));
    let scores = entropy_scores(input, &chosen);
    Ok(SelectionResult {
        chosen_ids: chosen,
        scores,
    })
}

pub fn select_entropy(input: &SelectionInput) -> Result<SelectionResult> {
    input.validate()?;
    let mut scored: Vec<(usize, f64)> = input
        .pool
        .unlabeled()
        .iter()
        .map(|&id| (id, shannon_entropy(&input.probs[id], false)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(input.query);
    Ok(SelectionResult {
        chosen_ids: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extreme {
    Farthest,
    Nearest,
}

/// Greedy k-center over `points` (indexed by id), starting from the labeled
/// set. Keeps one running min-distance per candidate and refreshes it against
/// each new pick. `seed_first` picks the first id when nothing is labeled.
fn greedy_k_center<P: AsRef<[f64]>>(
    input: &SelectionInput,
    points: &[P],
    extreme: Extreme,
    seed_first: impl Fn(&[usize]) -> usize,
) -> SelectionResult {
    let candidates = input.unlabeled();
    let mut min_dist = vec![f64::INFINITY; candidates.len()];
    let mut taken = vec![false; candidates.len()];
    let refresh = |min_dist: &mut [f64], center: &[f64]| {
        for (d, &id) in min_dist.iter_mut().zip(&candidates) {
            let dist = squared_l2(points[id].as_ref(), center).sqrt();
            if dist < *d {
                *d = dist;
            }
        }
    };
    for &id in input.pool.labeled() {
        refresh(&mut min_dist, points[id].as_ref());
    }
    let mut result = SelectionResult {
        chosen_ids: Vec::with_capacity(input.query),
        scores: Vec::with_capacity(input.query),
    };
    if input.pool.labeled().is_empty() {
        let first = seed_first(&candidates);
        let slot = candidates.binary_search(&first).expect("seed is a candidate");
        taken[slot] = true;
        result.chosen_ids.push(first);
        result.scores.push(f64::INFINITY);
        refresh(&mut min_dist, points[first].as_ref());
    }
    while result.chosen_ids.len() < input.query {
        let mut best: Option<usize> = None;
        for slot in 0..candidates.len() {
            if taken[slot] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => match extreme {
                    Extreme::Farthest => min_dist[slot] > min_dist[b],
                    Extreme::Nearest => min_dist[slot] < min_dist[b],
                },
            };
            if better {
                best = Some(slot);
            }
        }
        let slot = best.expect("query size was validated against the pool");
        taken[slot] = true;
        let id = candidates[slot];
        result.chosen_ids.push(id);
        result.scores.push(min_dist[slot]);
        refresh(&mut min_dist, points[id].as_ref());
    }
    result
}

fn highest<F: Fn(usize) -> f64>(ids: &[usize], score: F) -> usize {
    let mut best = ids[0];
    let mut best_score = score(best);
    for &id in &ids[1..] {
        let s = score(id);
        if s > best_score {
            best = id;
            best_score = s;
        }
    }
    best
}

/// Greedy farthest-point selection in feature space. With nothing labeled the
/// first pick is the largest-norm feature vector.
pub fn select_coreset(input: &SelectionInput) -> Result<SelectionResult> {
    input.validate()?;
    let features = input.require_features()?;
    Ok(greedy_k_center(input, features, Extreme::Farthest, |ids| {
        highest(ids, |id| norm(&features[id]))
    }))
}

/// Greedy farthest-point selection over student probability vectors. With
/// nothing labeled the first pick is the highest-entropy prediction.
pub fn select_pcoreset(input: &SelectionInput) -> Result<SelectionResult> {
    input.validate()?;
    Ok(greedy_k_center(input, input.probs, Extreme::Farthest, |ids| {
        highest(ids, |id| shannon_entropy(&input.probs[id], false))
    }))
}

/// PCoreSet with the argmax replaced by an argmin: each pick is the candidate
/// closest to the current set.
pub fn select_pcoreset_reverse(input: &SelectionInput) -> Result<SelectionResult> {
    input.validate()?;
    Ok(greedy_k_center(input, input.probs, Extreme::Nearest, |ids| {
        highest(ids, |id| shannon_entropy(&input.probs[id], false))
    }))
}

/// Per-class budgets `K_c = round(w_c / Σw · Q)` with `w_c = 1/n_c`, or 1 for
/// a class with no labeled samples.
pub fn class_budgets(labeled_counts: &[usize], query: usize) -> Vec<usize> {
    let weights: Vec<f64> = labeled_counts
        .iter()
        .map(|&n| if n > 0 { 1.0 / n as f64 } else { 1.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| (w / total * query as f64).round() as usize)
        .collect()
}

/// Samples each pseudo-labeled class partition up to its budget. Classes are
/// served in decreasing weight order (lowest class first on ties) so rounding
/// overshoot is trimmed from the best-covered classes; any shortfall is filled
/// uniformly from the leftovers.
pub fn select_class_balanced(input: &SelectionInput, seed: u64) -> Result<SelectionResult> {
    input.validate()?;
    let classes = input.pool.classes();
    let counts = input.pool.labeled_class_counts();
    let budgets = class_budgets(&counts, input.query);
    let mut partitions: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &id in input.pool.unlabeled() {
        partitions[input.probs[id].argmax()].push(id);
    }
    let mut order: Vec<usize> = (0..classes).collect();
    // fewer labeled samples means a larger weight
    order.sort_by_key(|&c| (if counts[c] == 0 { 1 } else { counts[c] }, c));
    let mut rng = strategy_rng(seed);
    let mut chosen = Vec::with_capacity(input.query);
    for c in order {
        let take = budgets[c].min(partitions[c].len()).min(input.query - chosen.len());
        chosen.extend(partial_shuffle(&mut partitions[c], take, &mut rng));
    }
    if chosen.len() < input.query {
        let picked: std::collections::BTreeSet<usize> = chosen.iter().copied().collect();
        let mut leftovers: Vec<usize> = input
            .pool
            .unlabeled()
            .iter()
            .copied()
            .filter(|id| !picked.contains(id))
            .collect();
        let need = input.query - chosen.len();
        chosen.extend(partial_shuffle(&mut leftovers, need, &mut rng));
    }
    let scores = entropy_scores(input, &chosen);
    Ok(SelectionResult {
        chosen_ids: chosen,
        scores,
    })
}

/// Last-layer gradient embedding `(p_head − e_ŷ) ⊗ h` for every head,
/// concatenated head by head. `ŷ` is the argmax of `mixed`.
pub fn badge_embedding(mixed: &[f64], heads: &[ProbVector], features: &[f64]) -> Vec<f64> {
    let y = crate::numerics::argmax(mixed);
    let mut out = Vec::with_capacity(heads.len() * mixed.len() * features.len());
    for p in heads {
        for (c, pc) in p.iter().enumerate() {
            let g = pc - if c == y { 1.0 } else { 0.0 };
            out.extend(features.iter().map(|h| g * h));
        }
    }
    out
}

/// k-means++ seeding over gradient embeddings. Every center, the first
/// included, is drawn with probability proportional to its squared distance
/// to the nearest chosen center, the origin standing in for the first one.
/// Draws walk the cumulative weights over ascending ids with
/// `u = U[0,1) · Σw`; if all weights vanish the lowest remaining id is taken.
pub fn select_badge(input: &SelectionInput, seed: u64) -> Result<SelectionResult> {
    input.validate()?;
    let features = input.require_features()?;
    let candidates = input.unlabeled();
    let embeddings: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&id| {
            let heads: &[ProbVector] = match input.head_probs {
                Some(h) => &h[id],
                None => std::slice::from_ref(&input.probs[id]),
            };
            badge_embedding(&input.probs[id], heads, &features[id])
        })
        .collect();
    let mut weight: Vec<f64> = embeddings.iter().map(|e| e.iter().map(|v| v * v).sum()).collect();
    let mut taken = vec![false; candidates.len()];
    let mut rng = strategy_rng(seed);
    let mut result = SelectionResult {
        chosen_ids: Vec::with_capacity(input.query),
        scores: Vec::with_capacity(input.query),
    };
    while result.chosen_ids.len() < input.query {
        let total: f64 = weight.iter().zip(&taken).filter(|(_, t)| !**t).map(|(w, _)| w).sum();
        let slot = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for (slot, w) in weight.iter().enumerate() {
                if taken[slot] || *w <= 0.0 {
                    continue;
                }
                cumulative += w;
                last_positive = Some(slot);
                if cumulative > u {
                    pick = Some(slot);
                    break;
                }
            }
            pick.or(last_positive).expect("positive total weight")
        } else {
            taken.iter().position(|t| !t).expect("query size was validated")
        };
        taken[slot] = true;
        result.chosen_ids.push(candidates[slot]);
        result.scores.push(weight[slot]);
        let center = &embeddings[slot];
        for (w, e) in weight.iter_mut().zip(&embeddings) {
            *w = w.min(squared_l2(e, center));
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn pool(classes: usize, labeled: &[(usize, usize)], unlabeled: impl IntoIterator<Item = usize>) -> PoolState {
        PoolState::from_parts(classes, labeled.iter().copied().collect::<BTreeMap<_, _>>(), unlabeled).unwrap()
    }

    /// Recomputes every min-distance from scratch at every step.
    fn brute_force_farthest(points: &[Vec<f64>], labeled: &[usize], unlabeled: &[usize], q: usize) -> Vec<usize> {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut centers: Vec<usize> = labeled.to_vec();
        let mut chosen = Vec::new();
        for _ in 0..q {
            let mut best: Option<(usize, f64)> = None;
            for &u in unlabeled {
                if chosen.contains(&u) {
                    continue;
                }
                let d = centers
                    .iter()
                    .map(|&c| dist(&points[u], &points[c]))
                    .fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((u, d));
                }
            }
            let (u, _) = best.unwrap();
            chosen.push(u);
            centers.push(u);
        }
        chosen
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("pcoresets".parse::<Strategy>().is_err());
    }

    #[test]
    fn budget_errors() {
        let p = pool(2, &[(0, 0)], [1, 2]);
        let probs = vec![ProbVector::uniform(2); 3];
        for q in [0, 3] {
            let input = SelectionInput::new(&p, &probs, q);
            assert!(matches!(select_entropy(&input), Err(Error::Budget { .. })));
            assert!(matches!(select_random(&input, 1), Err(Error::Budget { .. })));
        }
        let input = SelectionInput::new(&p, &probs, 1);
        assert!(matches!(select_coreset(&input), Err(Error::Config(_))));
    }

    #[test]
    fn random_takes_whole_pool_and_is_seeded() {
        let p = pool(2, &[], 0..6);
        let probs = vec![ProbVector::uniform(2); 6];
        let input = SelectionInput::new(&p, &probs, 6);
        let mut all = select_random(&input, 3).unwrap().chosen_ids;
        assert_eq!(all, select_random(&input, 3).unwrap().chosen_ids);
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn random_replays_the_strategy_stream() {
        let p = pool(2, &[], [4, 9, 17]);
        let probs = vec![ProbVector::uniform(2); 18];
        let input = SelectionInput::new(&p, &probs, 1);
        for seed in 0..20 {
            let mut rng = stream(seed, Stream::Strategy, 0);
            let expected = [4, 9, 17][rng.random_range(0..3usize)];
            assert_eq!(select_random(&input, seed).unwrap().chosen_ids, vec![expected]);
        }
    }

    #[test]
    fn entropy_picks_uniform_and_breaks_ties_low() {
        let p = pool(3, &[], 0..4);
        let mut probs = vec![pv(&[1.0, 0.0, 0.0]); 4];
        probs[2] = ProbVector::uniform(3);
        let input = SelectionInput::new(&p, &probs, 1);
        assert_eq!(select_entropy(&input).unwrap().chosen_ids, vec![2]);
        let same = vec![pv(&[0.2, 0.3, 0.5]); 4];
        let input = SelectionInput::new(&p, &same, 2);
        assert_eq!(select_entropy(&input).unwrap().chosen_ids, vec![0, 1]);
    }

    #[test]
    fn entropy_ranking_matches_hand_entropies() {
        let raw = [[0.7, 0.2, 0.1], [0.4, 0.4, 0.2], [0.9, 0.05, 0.05], [0.34, 0.33, 0.33]];
        let h: Vec<f64> = raw
            .iter()
            .map(|p| -p.iter().map(|v| v * f64::ln(*v)).sum::<f64>())
            .collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|a, b| h[*b].partial_cmp(&h[*a]).unwrap());
        let p = pool(3, &[], 0..4);
        let probs: Vec<ProbVector> = raw.iter().map(|r| pv(r)).collect();
        let input = SelectionInput::new(&p, &probs, 4);
        let result = select_entropy(&input).unwrap();
        assert_eq!(result.chosen_ids, order);
        assert_eq!(order, vec![3, 1, 0, 2]);
        for (id, s) in result.chosen_ids.iter().zip(&result.scores) {
            assert_close!(*s, h[*id], 1e-12);
        }
    }

    #[test]
    fn coreset_examples() {
        let p = pool(2, &[(0, 0)], 1..4);
        let features: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 0.0]).collect();
        let probs = vec![ProbVector::uniform(2); 4];
        let input = SelectionInput::new(&p, &probs, 1).with_features(&features);
        assert_eq!(select_coreset(&input).unwrap().chosen_ids, vec![3]);
        let input = SelectionInput::new(&p, &probs, 2).with_features(&features);
        let r = select_coreset(&input).unwrap();
        assert_eq!(r.chosen_ids, vec![3, 1]);
        assert_eq!(r.scores, vec![3.0, 1.0]);

        let flat = vec![vec![0.0, 0.0]; 4];
        let input = SelectionInput::new(&p, &probs, 2).with_features(&flat);
        let r = select_coreset(&input).unwrap();
        assert_eq!(r.chosen_ids, vec![1, 2]);
        assert_eq!(r.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn pcoreset_examples() {
        let p = pool(2, &[(0, 0)], 1..4);
        let probs = vec![pv(&[1.0, 0.0]), pv(&[0.9, 0.1]), pv(&[0.5, 0.5]), pv(&[0.2, 0.8])];
        let r = select_pcoreset(&SelectionInput::new(&p, &probs, 1)).unwrap();
        assert_eq!(r.chosen_ids, vec![3]);
        assert_close!(r.scores[0], 1.1314, 1e-4);
        let r = select_pcoreset(&SelectionInput::new(&p, &probs, 2)).unwrap();
        assert_eq!(r.chosen_ids, vec![3, 2]);
        assert_close!(r.scores[1], 0.4243, 1e-4);

        let r = select_pcoreset_reverse(&SelectionInput::new(&p, &probs, 1)).unwrap();
        assert_eq!(r.chosen_ids, vec![1]);
        assert_close!(r.scores[0], 0.1414, 1e-4);

        let same = vec![pv(&[0.3, 0.7]); 4];
        for f in [select_pcoreset, select_pcoreset_reverse] {
            assert_eq!(f(&SelectionInput::new(&p, &same, 2)).unwrap().chosen_ids, vec![1, 2]);
        }
        let forward = select_pcoreset(&SelectionInput::new(&p, &probs, 3)).unwrap();
        let reverse = select_pcoreset_reverse(&SelectionInput::new(&p, &probs, 3)).unwrap();
        let as_set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(as_set(&forward.chosen_ids), as_set(&reverse.chosen_ids));
    }

    #[test]
    fn empty_labeled_set_seeds() {
        let p = pool(2, &[], 0..3);
        let probs = vec![pv(&[0.9, 0.1]), pv(&[0.5, 0.5]), pv(&[1.0, 0.0])];
        let r = select_pcoreset(&SelectionInput::new(&p, &probs, 2)).unwrap();
        assert_eq!(r.chosen_ids, vec![1, 2]);
        let features = vec![vec![1.0, 0.0], vec![0.0, 5.0], vec![0.0, 0.0]];
        let r = select_coreset(&SelectionInput::new(&p, &probs, 2).with_features(&features)).unwrap();
        // |(1,0) − (0,5)| = √26 beats |(0,0) − (0,5)| = 5
        assert_eq!(r.chosen_ids, vec![1, 0]);
    }

    #[test]
    fn class_budget_examples() {
        assert_eq!(class_budgets(&[1, 1, 2], 5), vec![2, 2, 1]);
        assert_eq!(class_budgets(&[3, 3, 3, 3], 8), vec![2; 4]);
        assert_eq!(class_budgets(&[0, 1], 4), vec![2, 2]);
        assert_eq!(class_budgets(&[0, 2], 3), vec![2, 1]);
    }

    #[test]
    fn class_balanced_follows_budgets() {
        // pseudo-labels: ids 2..6 -> class 0, 6..10 -> class 1, 10..14 -> class 2
        let mut probs = vec![ProbVector::uniform(3); 14];
        for (id, p) in probs.iter_mut().enumerate().skip(2) {
            *p = ProbVector::one_hot(3, (id - 2) / 4);
        }
        let p = pool(3, &[(0, 2), (1, 2)], 2..14);
        let r = select_class_balanced(&SelectionInput::new(&p, &probs, 5), 7).unwrap();
        let per_class = |ids: &[usize]| {
            let mut n = [0; 3];
            for id in ids {
                n[(id - 2) / 4] += 1;
            }
            n
        };
        // n = (0, 0, 2) gives weights (1, 1, 0.5) and budgets (2, 2, 1)
        assert_eq!(per_class(&r.chosen_ids), [2, 2, 1]);
        // equal counts overshoot (1 + 1 + 1 > 2); the first classes are served
        let p = pool(3, &[], 2..14);
        let r = select_class_balanced(&SelectionInput::new(&p, &probs, 2), 7).unwrap();
        assert_eq!(per_class(&r.chosen_ids), [1, 1, 0]);
    }

    #[test]
    fn class_balanced_fills_shortfall() {
        // every sample is pseudo-labeled class 0, which gets budget 1 of 3
        let probs = vec![ProbVector::one_hot(3, 0); 8];
        let p = pool(3, &[], 0..8);
        let r = select_class_balanced(&SelectionInput::new(&p, &probs, 3), 1).unwrap();
        assert_eq!(r.chosen_ids.len(), 3);
        assert_eq!(r.chosen_ids.iter().collect::<BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn badge_embedding_sizes() {
        let probs = [pv(&[0.6, 0.3, 0.1])];
        let heads = [vec![pv(&[0.6, 0.3, 0.1]), pv(&[0.5, 0.25, 0.25])]];
        let h = [1.0, 2.0];
        assert_eq!(badge_embedding(&probs[0], &heads[0], &h).len(), 2 * 2 * 3);
        assert_eq!(badge_embedding(&probs[0], &heads[0][..1], &h).len(), 2 * 3);
        let g = badge_embedding(&probs[0], &heads[0][..1], &h);
        let expected = [-0.4, -0.8, 0.3, 0.6, 0.1, 0.2];
        for (a, b) in g.iter().zip(expected) {
            assert_close!(*a, b, 1e-12);
        }
    }

    #[test]
    fn badge_skips_confident_sample() {
        let probs = vec![pv(&[1.0, 0.0]), pv(&[0.6, 0.4]), pv(&[0.3, 0.7])];
        let features = vec![vec![1.0, 1.0]; 3];
        let p = pool(2, &[], 0..3);
        for seed in 0..50 {
            let input = SelectionInput::new(&p, &probs, 1).with_features(&features);
            assert_ne!(select_badge(&input, seed).unwrap().chosen_ids, vec![0]);
        }
    }

    #[test]
    fn badge_replays_d2_stream() {
        let probs = vec![pv(&[0.6, 0.4]), pv(&[0.3, 0.7]), pv(&[0.5, 0.5])];
        let heads: Vec<Vec<ProbVector>> = vec![
            vec![pv(&[0.6, 0.4]), pv(&[0.55, 0.45])],
            vec![pv(&[0.3, 0.7]), pv(&[0.4, 0.6])],
            vec![pv(&[0.5, 0.5]), pv(&[0.5, 0.5])],
        ];
        let features = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]];
        // ŷ = (0, 1, 0); squared norms of the stacked (p − e_ŷ) ⊗ h
        let w0 = (0.16 + 0.16) + (0.2025 + 0.2025);
        let w1 = 4.0 * (0.09 + 0.09) + 4.0 * (0.16 + 0.16);
        let w2 = 2.0 * (0.25 + 0.25) + 2.0 * (0.25 + 0.25);
        let weights = [w0, w1, w2];
        let total: f64 = weights.iter().sum();
        let p = pool(2, &[], 0..3);
        let input = SelectionInput::new(&p, &probs, 1)
            .with_features(&features)
            .with_head_probs(&heads);
        for seed in 0..30 {
            let u = stream(seed, Stream::Strategy, 0).random::<f64>() * total;
            let mut acc = 0.0;
            let expected = weights.iter().position(|w| {
                acc += w;
                acc > u
            });
            let r = select_badge(&input, seed).unwrap();
            assert_eq!(r.chosen_ids, vec![expected.unwrap()]);
            assert_close!(r.scores[0], weights[expected.unwrap()], 1e-12);
        }
    }

    fn arb_instance() -> impl proptest::strategy::Strategy<Value = (Vec<Vec<f64>>, usize, usize)> {
        (2usize..5, 2usize..20).prop_flat_map(|(c, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), n + 1),
                0..=n.min(3),
                1..=n,
            )
        })
    }

    fn normalize(rows: &[Vec<f64>]) -> Vec<ProbVector> {
        rows.iter()
            .map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-9 * r.len() as f64;
                ProbVector::normalized(r.iter().map(|v| (v + 1e-9) / s).collect()).unwrap()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn every_strategy_returns_q_distinct_unlabeled((rows, nl, q) in arb_instance(), seed in 0u64..1000) {
            let n = rows.len();
            let probs = normalize(&rows);
            let classes = probs[0].len();
            let labeled: Vec<(usize, usize)> = (0..nl).map(|i| (i, i % classes)).collect();
            let p = pool(classes, &labeled, nl..n);
            let q = q.min(n - nl);
            let heads: Vec<Vec<ProbVector>> = probs.iter().map(|p| vec![p.clone(), p.clone()]).collect();
            let input = SelectionInput::new(&p, &probs, q).with_features(&rows).with_head_probs(&heads);
            for s in Strategy::ALL {
                let r = select(s, &input, seed).unwrap();
                prop_assert_eq!(r.chosen_ids.len(), q);
                let set: BTreeSet<usize> = r.chosen_ids.iter().copied().collect();
                prop_assert_eq!(set.len(), q);
                prop_assert!(set.iter().all(|id| p.unlabeled().contains(id)));
            }
        }

        #[test]
        fn pcoreset_matches_brute_force((rows, nl, q) in arb_instance()) {
            let n = rows.len();
            let probs = normalize(&rows);
            let classes = probs[0].len();
            let labeled: Vec<(usize, usize)> = (0..nl.max(1)).map(|i| (i, 0)).collect();
            let p = pool(classes, &labeled, nl.max(1)..n);
            let q = q.min(n - nl.max(1));
            let points: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
            let unlabeled: Vec<usize> = (nl.max(1)..n).collect();
            let labeled_ids: Vec<usize> = labeled.iter().map(|l| l.0).collect();
            let expected = brute_force_farthest(&points, &labeled_ids, &unlabeled, q);
            let input = SelectionInput::new(&p, &probs, q).with_features(&points);
            prop_assert_eq!(&select_pcoreset(&input).unwrap().chosen_ids, &expected);
            prop_assert_eq!(&select_coreset(&input).unwrap().chosen_ids, &expected);
        }

        #[test]
        fn pcoreset_never_grows_covering_radius((rows, nl, q) in arb_instance()) {
            let n = rows.len();
            let probs = normalize(&rows);
            let classes = probs[0].len();
            let labeled: Vec<(usize, usize)> = (0..nl.max(1)).map(|i| (i, 0)).collect();
            let p = pool(classes, &labeled, nl.max(1)..n);
            let q = q.min(n - nl.max(1));
            let chosen = select_pcoreset(&SelectionInput::new(&p, &probs, q)).unwrap().chosen_ids;
            let radius = |centers: &[usize]| {
                p.unlabeled()
                    .iter()
                    .map(|&u| centers.iter().map(|&c| squared_l2(&probs[u], &probs[c]).sqrt()).fold(f64::INFINITY, f64::min))
                    .fold(0.0, f64::max)
            };
            let before: Vec<usize> = p.labeled().iter().copied().collect();
            let mut after = before.clone();
            after.extend(&chosen);
            prop_assert!(radius(&after) <= radius(&before));
        }

        #[test]
        fn scaling_features_keeps_coreset_picks((rows, nl, q) in arb_instance(), scale in 0.1f64..10.0) {
            let n = rows.len();
            let probs = normalize(&rows);
            let classes = probs[0].len();
            let labeled: Vec<(usize, usize)> = (0..nl).map(|i| (i, 0)).collect();
            let p = pool(classes, &labeled, nl..n);
            let q = q.min(n - nl);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let a = select_coreset(&SelectionInput::new(&p, &probs, q).with_features(&rows)).unwrap();
            let b = select_coreset(&SelectionInput::new(&p, &probs, q).with_features(&scaled)).unwrap();
            prop_assert_eq!(a.chosen_ids, b.chosen_ids);
        }
    }
}
