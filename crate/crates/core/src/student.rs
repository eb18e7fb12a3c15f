//! The distilled student: a shared feature map `h` followed by a cross-entropy
//! head `g_CE` and a distillation head `g_KD`.
//!
//! Training minimizes `λ·L_CE + (1 − λ)·L_KD` by mini-batch gradient descent
//! with closed-form gradients. Inference mixes the heads as
//! `α·σ(g_CE(h)) + (1 − α)·σ(g_KD(h) / β)`.
//!
//! A single-head layout is also supported: one head trained directly on the
//! combined loss, whose minimizer is `λ·y + (1 − λ)·f(x)`.
//!
//! All parameters live in one flat vector so gradients, updates, and
//! finite-difference checks operate on the same layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::numerics::{kl_unchecked, l1_distance, softmax_unchecked, temper, ProbVector};
use crate::rng::{stream, Stream, StreamRng};
use crate::teacher::Teacher;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ETA: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 1.0;

/// Architecture of the shared feature extractor `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Identity,
    Linear {
        hidden: usize,
    },
    /// `W2·relu(W1·x + b1) + b2`, both layers `hidden` wide.
    Mlp1 {
        hidden: usize,
    },
}

impl FeatureMap {
    fn output_dim(&self, input_dim: usize) -> usize {
        match *self {
            FeatureMap::Identity => input_dim,
            FeatureMap::Linear { hidden } | FeatureMap::Mlp1 { hidden } => hidden,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            FeatureMap::Identity => "identity",
            FeatureMap::Linear { .. } => "linear",
            FeatureMap::Mlp1 { .. } => "mlp1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    Dual,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_map: FeatureMap,
    pub input_dim: usize,
    pub classes: usize,
    pub heads: Heads,
    /// KD head temperature η used in training.
    pub eta: f64,
    /// Inference mixing weight α on the CE head.
    pub alpha: f64,
    /// Inference temperature β on the KD head.
    pub beta: f64,
}

impl Architecture {
    pub fn new(feature_map: FeatureMap, input_dim: usize, classes: usize) -> Self {
        Architecture {
            feature_map,
            input_dim,
            classes,
            heads: Heads::Dual,
            eta: DEFAULT_ETA,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::config("student needs input_dim >= 1 and >= 2 classes"));
        }
        if self.feature_map.output_dim(self.input_dim) == 0 {
            return Err(Error::config("feature map output dimension is zero"));
        }
        if !(self.eta > 0.0) || !(self.beta > 0.0) {
            return Err(Error::config("eta and beta must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.feature_map.output_dim(self.input_dim)
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    d: usize,
    h: usize,
    c: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ce_w: usize,
    ce_b: usize,
    kd_w: usize,
    kd_b: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let d = arch.input_dim;
        let h = arch.hidden_dim();
        let c = arch.classes;
        let mut next = 0;
        let mut take = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let (w1, b1, w2, b2) = match arch.feature_map {
            FeatureMap::Identity => (0, 0, 0, 0),
            FeatureMap::Linear { .. } => {
                let w1 = take(h * d);
                let b1 = take(h);
                (w1, b1, 0, 0)
            }
            FeatureMap::Mlp1 { .. } => {
                let w1 = take(h * d);
                let b1 = take(h);
                let w2 = take(h * h);
                let b2 = take(h);
                (w1, b1, w2, b2)
            }
        };
        let ce_w = take(c * h);
        let ce_b = take(c);
        let (kd_w, kd_b) = match arch.heads {
            Heads::Dual => (take(c * h), take(c)),
            Heads::Single => (0, 0),
        };
        Layout {
            d,
            h,
            c,
            w1,
            b1,
            w2,
            b2,
            ce_w,
            ce_b,
            kd_w,
            kd_b,
            total: next,
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
struct Forward {
    /// Pre-activation of the MLP hidden layer.
    pre: Vec<f64>,
    /// Post-ReLU MLP hidden layer.
    act: Vec<f64>,
    h: Vec<f64>,
    z_ce: Vec<f64>,
    z_kd: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, bias)| {
        let row = &w[r * cols..(r + 1) * cols];
        bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }));
}

/// `dw += g ⊗ x`, `db += g`, and optionally `dx += Wᵀ g`.
fn affine_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, gr) in g.iter().enumerate() {
        db[r] += gr;
        let row = &mut dw[r * cols..(r + 1) * cols];
        row.iter_mut().zip(x).for_each(|(a, v)| *a += gr * v);
    }
    if let Some(dx) = dx {
        for (r, gr) in g.iter().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            dx.iter_mut().zip(row).for_each(|(a, v)| *a += gr * v);
        }
    }
}

/// Something that maps features to a class distribution.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> ProbVector;
}

/// A labeled training item: features, class, and (for distillation) the KD target.
#[derive(Debug, Clone, Copy)]
pub struct LabeledItem<'a> {
    pub x: &'a [f64],
    pub label: usize,
    pub target: Option<&'a [f64]>,
}

/// An unlabeled training item with its KD target.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledItem<'a> {
    pub x: &'a [f64],
    pub target: &'a [f64],
}

#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub labeled: Vec<LabeledItem<'a>>,
    pub unlabeled: Vec<UnlabeledItem<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: DEFAULT_LAMBDA,
            learning_rate: 0.1,
            epochs: 200,
            labeled_batch: 64,
            unlabeled_batch: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(Error::config("learning rate and epochs must be positive"));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        Ok(())
    }
}

/// Everything the trainer reads, indexed by sample id.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub samples: &'a [Sample],
    pub labeled: &'a [(usize, usize)],
    /// Ids the unlabeled KD batch is drawn from (D^(l) ∪ D^(u)).
    pub kd_pool: &'a [usize],
    /// KD target per sample id; `None` trains on cross-entropy alone.
    pub targets: Option<&'a [ProbVector]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean step loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Endless iteration over a list, reshuffled after every full pass.
struct Cycle<T> {
    items: Vec<T>,
    cursor: usize,
}

impl<T: Copy> Cycle<T> {
    fn new(mut items: Vec<T>, rng: &mut StreamRng) -> Self {
        items.shuffle(rng);
        Cycle { items, cursor: 0 }
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn next(&mut self, rng: &mut StreamRng) -> T {
        if self.cursor == self.items.len() {
            self.items.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.items[self.cursor - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    arch: Architecture,
    layout: Layout,
    params: Vec<f64>,
}

impl Student {
    /// Weights and biases drawn uniformly from `[−1/√fan_in, 1/√fan_in]`.
    pub fn new(arch: Architecture, rng: &mut StreamRng) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        let (d, h, c) = (layout.d, layout.h, layout.c);
        match arch.feature_map {
            FeatureMap::Identity => {}
            FeatureMap::Linear { .. } => {
                fill(layout.w1..layout.w1 + h * d + h, d);
            }
            FeatureMap::Mlp1 { .. } => {
                fill(layout.w1..layout.w1 + h * d + h, d);
                fill(layout.w2..layout.w2 + h * h + h, h);
            }
        }
        fill(layout.ce_w..layout.ce_w + c * h + c, h);
        if arch.heads == Heads::Dual {
            fill(layout.kd_w..layout.kd_w + c * h + c, h);
        }
        Ok(Student { arch, layout, params })
    }

    pub fn seeded(arch: Architecture, seed: u64) -> Result<Self> {
        Student::new(arch, &mut stream(seed, Stream::Init, 0))
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn set_mixing(&mut self, alpha: f64, beta: f64) -> Result<()> {
        let mut arch = self.arch;
        arch.alpha = alpha;
        arch.beta = beta;
        arch.validate()?;
        self.arch = arch;
        Ok(())
    }

    /// Sets the head parameters so that `g(h) = weights·h + bias` for the given
    /// head (0 = CE, 1 = KD). Handy for constructing students with known outputs.
    pub fn set_head(&mut self, head: usize, weights: &[f64], bias: &[f64]) -> Result<()> {
        let (c, h) = (self.layout.c, self.layout.h);
        if weights.len() != c * h || bias.len() != c {
            return Err(Error::invalid("head shape mismatch"));
        }
        let (w, b) = match (head, self.arch.heads) {
            (0, _) => (self.layout.ce_w, self.layout.ce_b),
            (1, Heads::Dual) => (self.layout.kd_w, self.layout.kd_b),
            _ => return Err(Error::invalid(format!("no head {head}"))),
        };
        self.params[w..w + c * h].copy_from_slice(weights);
        self.params[b..b + c].copy_from_slice(bias);
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let l = &self.layout;
        let p = &self.params;
        let mut f = Forward {
            pre: Vec::new(),
            act: Vec::new(),
            h: Vec::new(),
            z_ce: Vec::new(),
            z_kd: Vec::new(),
        };
        match self.arch.feature_map {
            FeatureMap::Identity => f.h.extend_from_slice(x),
            FeatureMap::Linear { .. } => {
                affine(&p[l.w1..l.b1], &p[l.b1..l.b1 + l.h], x, &mut f.h);
            }
            FeatureMap::Mlp1 { .. } => {
                affine(&p[l.w1..l.b1], &p[l.b1..l.b1 + l.h], x, &mut f.pre);
                f.act = f.pre.iter().map(|v| v.max(0.0)).collect();
                affine(&p[l.w2..l.b2], &p[l.b2..l.b2 + l.h], &f.act, &mut f.h);
            }
        }
        affine(&p[l.ce_w..l.ce_b], &p[l.ce_b..l.ce_b + l.c], &f.h, &mut f.z_ce);
        if self.arch.heads == Heads::Dual {
            affine(&p[l.kd_w..l.kd_b], &p[l.kd_b..l.kd_b + l.c], &f.h, &mut f.z_kd);
        }
        f
    }

    /// Shared features `h(x)`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).h
    }

    /// Raw head logits: `[g_CE(h)]` or `[g_CE(h), g_KD(h)]`.
    pub fn logits(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let f = self.forward(x);
        match self.arch.heads {
            Heads::Dual => vec![f.z_ce, f.z_kd],
            Heads::Single => vec![f.z_ce],
        }
    }

    /// Per-head training-time distributions: `σ(g_CE)` and `σ(g_KD/η)`.
    pub fn head_probs(&self, x: &[f64]) -> Vec<ProbVector> {
        let f = self.forward(x);
        let mut out = vec![ProbVector::normalized(softmax_unchecked(&f.z_ce, 1.0)).expect("softmax of finite logits")];
        if self.arch.heads == Heads::Dual {
            out.push(
                ProbVector::normalized(softmax_unchecked(&f.z_kd, self.arch.eta)).expect("softmax of finite logits"),
            );
        }
        out
    }

    /// Final prediction: DHO mixture for dual heads, `σ(g(h))` for a single head.
    pub fn infer(&self, x: &[f64]) -> ProbVector {
        let f = self.forward(x);
        self.mix(&f)
    }

    fn mix(&self, f: &Forward) -> ProbVector {
        let p_ce = softmax_unchecked(&f.z_ce, 1.0);
        let p = match self.arch.heads {
            Heads::Single => p_ce,
            Heads::Dual => {
                let a = self.arch.alpha;
                let p_kd = softmax_unchecked(&f.z_kd, self.arch.beta);
                p_ce.iter().zip(&p_kd).map(|(u, v)| a * u + (1.0 - a) * v).collect()
            }
        };
        ProbVector::normalized(p).expect("mixture of distributions")
    }

    /// The KD target for a teacher prediction: tempered by η for the dual
    /// layout, used as-is for a single head.
    pub fn kd_target(&self, teacher_pred: &ProbVector) -> Result<ProbVector> {
        match self.arch.heads {
            Heads::Dual => temper(teacher_pred, self.arch.eta),
            Heads::Single => Ok(teacher_pred.clone()),
        }
    }

    /// Distribution the KD loss compares against the target.
    fn kd_dist(&self, f: &Forward) -> Vec<f64> {
        match self.arch.heads {
            Heads::Dual => softmax_unchecked(&f.z_kd, self.arch.eta),
            Heads::Single => softmax_unchecked(&f.z_ce, 1.0),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.d {
            return Err(Error::invalid(format!(
                "input has {} features, student expects {}",
                x.len(),
                self.layout.d
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy of `σ(g_CE(h(x)))` against the labels.
    pub fn loss_ce(&self, labeled: &[(&[f64], usize)]) -> Result<f64> {
        if labeled.is_empty() {
            return Err(Error::invalid("cross-entropy over an empty batch"));
        }
        let mut total = 0.0;
        for (x, y) in labeled {
            self.check_input(x)?;
            if *y >= self.layout.c {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            let p = softmax_unchecked(&self.forward(x).z_ce, 1.0);
            total += -p[*y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / labeled.len() as f64)
    }

    /// `mean_l KL(t‖q) + mean_u KL(t‖q)` where `q` is the KD distribution and
    /// `t` the (already tempered) target. An empty side contributes zero.
    pub fn loss_kd(&self, labeled: &[(&[f64], &[f64])], unlabeled: &[(&[f64], &[f64])]) -> Result<f64> {
        if labeled.is_empty() && unlabeled.is_empty() {
            return Err(Error::invalid("distillation loss over two empty batches"));
        }
        let side = |items: &[(&[f64], &[f64])]| -> Result<f64> {
            if items.is_empty() {
                return Ok(0.0);
            }
            let mut total = 0.0;
            for (x, t) in items {
                self.check_input(x)?;
                if t.len() != self.layout.c {
                    return Err(Error::invalid("target has the wrong number of classes"));
                }
                total += kl_unchecked(t, &self.kd_dist(&self.forward(x)));
            }
            Ok(total / items.len() as f64)
        };
        Ok(side(labeled)? + side(unlabeled)?)
    }

    /// `λ·L_CE + (1 − λ)·L_KD` on one batch.
    pub fn combined_loss(&self, batch: &Batch, lambda: f64) -> Result<f64> {
        Ok(self.loss_and_gradient(batch, lambda, false)?.0)
    }

    /// Loss and its gradient with respect to [`Student::params`].
    pub fn combined_gradient(&self, batch: &Batch, lambda: f64) -> Result<(f64, Vec<f64>)> {
        let (loss, grad) = self.loss_and_gradient(batch, lambda, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn loss_and_gradient(&self, batch: &Batch, lambda: f64, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        if batch.labeled.is_empty() && batch.unlabeled.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let distill = lambda < 1.0;
        let l = self.layout;
        let eta = match self.arch.heads {
            Heads::Dual => self.arch.eta,
            Heads::Single => 1.0,
        };
        let mut grad = if want_grad { Some(vec![0.0; l.total]) } else { None };
        let mut loss = 0.0;
        let nl = batch.labeled.len().max(1) as f64;
        let nu = batch.unlabeled.len().max(1) as f64;

        let mut visit = |x: &[f64], label: Option<usize>, target: Option<&[f64]>, kd_weight: f64| -> Result<()> {
            self.check_input(x)?;
            let f = self.forward(x);
            let mut g_ce = vec![0.0; l.c];
            let mut g_kd = vec![0.0; l.c];
            if let Some(y) = label {
                if y >= l.c {
                    return Err(Error::invalid(format!("label {y} out of range")));
                }
                let w = lambda / nl;
                if w > 0.0 {
                    let p = softmax_unchecked(&f.z_ce, 1.0);
                    loss += -w * p[y].max(f64::MIN_POSITIVE).ln();
                    for (c, pc) in p.iter().enumerate() {
                        g_ce[c] += w * (pc - if c == y { 1.0 } else { 0.0 });
                    }
                }
            }
            if let (Some(t), true) = (target, distill) {
                if t.len() != l.c {
                    return Err(Error::invalid("target has the wrong number of classes"));
                }
                let w = (1.0 - lambda) * kd_weight;
                let q = self.kd_dist(&f);
                loss += w * kl_unchecked(t, &q);
                let g = match self.arch.heads {
                    Heads::Dual => &mut g_kd,
                    Heads::Single => &mut g_ce,
                };
                for c in 0..l.c {
                    g[c] += w * (q[c] - t[c]) / eta;
                }
            }
            let Some(grad) = grad.as_mut() else {
                return Ok(());
            };
            let p = &self.params;
            let mut dh = vec![0.0; l.h];
            {
                let (head, rest) = grad.split_at_mut(l.ce_b);
                affine_backward(
                    &p[l.ce_w..l.ce_b],
                    &f.h,
                    &g_ce,
                    &mut head[l.ce_w..],
                    &mut rest[..l.c],
                    Some(&mut dh),
                );
            }
            if self.arch.heads == Heads::Dual {
                let (head, rest) = grad.split_at_mut(l.kd_b);
                affine_backward(
                    &p[l.kd_w..l.kd_b],
                    &f.h,
                    &g_kd,
                    &mut head[l.kd_w..],
                    &mut rest[..l.c],
                    Some(&mut dh),
                );
            }
            match self.arch.feature_map {
                FeatureMap::Identity => {}
                FeatureMap::Linear { .. } => {
                    let (w, b) = grad.split_at_mut(l.b1);
                    affine_backward(&p[l.w1..l.b1], x, &dh, &mut w[l.w1..], &mut b[..l.h], None);
                }
                FeatureMap::Mlp1 { .. } => {
                    let mut dact = vec![0.0; l.h];
                    {
                        let (w, b) = grad.split_at_mut(l.b2);
                        affine_backward(
                            &p[l.w2..l.b2],
                            &f.act,
                            &dh,
                            &mut w[l.w2..],
                            &mut b[..l.h],
                            Some(&mut dact),
                        );
                    }
                    let dpre: Vec<f64> = dact
                        .iter()
                        .zip(&f.pre)
                        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                        .collect();
                    let (w, b) = grad.split_at_mut(l.b1);
                    affine_backward(&p[l.w1..l.b1], x, &dpre, &mut w[l.w1..], &mut b[..l.h], None);
                }
            }
            Ok(())
        };

        for item in &batch.labeled {
            visit(item.x, Some(item.label), item.target, 1.0 / nl)?;
        }
        for item in &batch.unlabeled {
            visit(item.x, None, Some(item.target), 1.0 / nu)?;
        }
        Ok((loss, grad))
    }

    /// Mini-batch gradient descent on `λ·L_CE + (1 − λ)·L_KD`.
    ///
    /// Every step pairs a labeled batch of `min(B, |D^(l)|)` with a KD batch
    /// of `B′` ids from `kd_pool`; both are drawn by cycling through a
    /// reshuffled order. An epoch is one pass over the longer of the two,
    /// `max(⌈|D^(l)| / B⌉, ⌈|kd_pool| / B′⌉)` steps, whether or not the KD
    /// term is active, so runs with and without distillation take the same
    /// number of updates. Shuffling draws from the `Shuffle` stream of
    /// `config.seed`.
    pub fn train(&mut self, data: &TrainData, config: &TrainConfig) -> Result<TrainReport> {
        config.validate()?;
        if data.labeled.is_empty() {
            return Err(Error::protocol("training needs at least one labeled sample"));
        }
        let distill = config.lambda < 1.0 && data.targets.is_some();
        let targets = data.targets.filter(|_| distill);
        let mut rng = stream(config.seed, Stream::Shuffle, 0);
        let mut labeled = Cycle::new(data.labeled.to_vec(), &mut rng);
        let mut kd = Cycle::new(data.kd_pool.to_vec(), &mut rng);
        let labeled_batch = config.labeled_batch.min(data.labeled.len());
        let steps = data
            .labeled
            .len()
            .div_ceil(config.labeled_batch)
            .max(data.kd_pool.len().div_ceil(config.unlabeled_batch));
        let mut trace = Vec::with_capacity(config.epochs);

        let target_of = |id: usize| -> Result<&[f64]> {
            targets
                .and_then(|t| t.get(id))
                .map(|p| p.as_slice())
                .ok_or(Error::Lookup(id))
        };
        let sample_x = |id: usize| -> Result<&[f64]> {
            data.samples
                .get(id)
                .map(|s| s.features.as_slice())
                .ok_or_else(|| Error::invalid(format!("unknown sample id {id}")))
        };

        for epoch in 0..config.epochs {
            let mut epoch_loss = 0.0;
            for _ in 0..steps {
                let mut batch = Batch::default();
                for _ in 0..labeled_batch {
                    let (id, label) = labeled.next(&mut rng);
                    batch.labeled.push(LabeledItem {
                        x: sample_x(id)?,
                        label,
                        target: if distill { Some(target_of(id)?) } else { None },
                    });
                }
                if distill && !kd.is_empty() {
                    for _ in 0..config.unlabeled_batch {
                        let id = kd.next(&mut rng);
                        batch.unlabeled.push(UnlabeledItem {
                            x: sample_x(id)?,
                            target: target_of(id)?,
                        });
                    }
                }
                let (loss, grad) = self.combined_gradient(&batch, config.lambda)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Training { epoch, loss });
                }
                self.params
                    .iter_mut()
                    .zip(&grad)
                    .for_each(|(p, g)| *p -= config.learning_rate * g);
                epoch_loss += loss;
            }
            let mean = epoch_loss / steps as f64;
            if !mean.is_finite() {
                return Err(Error::Training { epoch, loss: mean });
            }
            trace.push(mean);
        }
        Ok(TrainReport { loss_trace: trace })
    }

    /// Writes a header line describing the shape, then one parameter per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let a = &self.arch;
        let mut out = format!(
            "shape:feature={};input={};hidden={};classes={};heads={};eta={};alpha={};beta={}\n",
            a.feature_map.name(),
            a.input_dim,
            a.hidden_dim(),
            a.classes,
            match a.heads {
                Heads::Dual => "dual",
                Heads::Single => "single",
            },
            a.eta,
            a.alpha,
            a.beta
        );
        for p in &self.params {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Student> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("shape:"))
            .ok_or_else(|| Error::Ingestion {
                path: path.to_path_buf(),
                row: 0,
                message: "missing shape header".into(),
            })?;
        let bad = |message: String| Error::Ingestion {
            path: path.to_path_buf(),
            row: 0,
            message,
        };
        let mut fields = std::collections::BTreeMap::new();
        for kv in header.split(';') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header field {kv:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let hidden = num("hidden")?;
        let feature_map = match get("feature")? {
            "identity" => FeatureMap::Identity,
            "linear" => FeatureMap::Linear { hidden },
            "mlp1" => FeatureMap::Mlp1 { hidden },
            other => return Err(bad(format!("unknown feature map {other}"))),
        };
        let heads = match get("heads")? {
            "dual" => Heads::Dual,
            "single" => Heads::Single,
            other => return Err(bad(format!("unknown head layout {other}"))),
        };
        let arch = Architecture {
            feature_map,
            input_dim: num("input")?,
            classes: num("classes")?,
            heads,
            eta: float("eta")?,
            alpha: float("alpha")?,
            beta: float("beta")?,
        };
        arch.validate()?;
        let params = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|_| Error::Ingestion {
                    path: path.to_path_buf(),
                    row: i + 1,
                    message: format!("cannot parse {l:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(bad(format!(
                "{} parameters for a shape that needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Student { arch, layout, params })
    }
}

impl Predictor for Student {
    fn predict(&self, x: &[f64]) -> ProbVector {
        self.infer(x)
    }
}

/// Minimizer of `λ·CE(p, y) + (1 − λ)·KL(f‖p)` over the simplex: `λ·y + (1 − λ)·f`.
pub fn optimal_target(label: usize, teacher_pred: &ProbVector, lambda: f64) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if label >= teacher_pred.len() {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    ProbVector::normalized(
        teacher_pred
            .iter()
            .enumerate()
            .map(|(c, f)| (1.0 - lambda) * f + if c == label { lambda } else { 0.0 })
            .collect(),
    )
}

/// Largest L1 gap between predictions and the optimal targets.
pub fn convergence_error_from(
    predictions: &[ProbVector],
    labels: &[usize],
    teacher_preds: &[ProbVector],
    lambda: f64,
) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.len() != teacher_preds.len() {
        return Err(Error::invalid("prediction, label, and teacher counts differ"));
    }
    let mut worst: f64 = 0.0;
    for ((p, y), f) in predictions.iter().zip(labels).zip(teacher_preds) {
        let target = optimal_target(*y, f, lambda)?;
        worst = worst.max(l1_distance(p, &target)?);
    }
    Ok(worst)
}

/// Empirical ε: `max_x ‖f_r(x) − f*(x)‖₁` over the given samples.
pub fn convergence_error(
    student: &impl Predictor,
    samples: &[&Sample],
    teacher: &impl Teacher,
    lambda: f64,
) -> Result<f64> {
    let preds: Vec<ProbVector> = samples.iter().map(|s| student.predict(&s.features)).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let teacher_preds = samples.iter().map(|s| teacher.predict(s)).collect::<Result<Vec<_>>>()?;
    convergence_error_from(&preds, &labels, &teacher_preds, lambda)
}
