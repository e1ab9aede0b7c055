//! RBF soft-margin SVM.
//!
//! Binary problems are solved on the dual with sequential minimal optimisation,
//! choosing the maximal-violating pair at each step. Multiclass models are
//! one-vs-one over standardised features; scores are duel votes plus a
//! squashed decision-value sum that breaks vote ties.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::metrics::{evaluate, MetricsReport};
use crate::rng::stream;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmHyper {
    pub c: f64,
    pub gamma: f64,
}

impl SvmHyper {
    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        let h = Self { c, gamma };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "SVM hyperparameters must be positive, got C = {}, gamma = {}",
                self.c, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    /// Stop when the maximal KKT violation `m(α) − M(α)` falls below this.
    pub tol: f64,
    /// Pair-update budget per training sample.
    pub max_updates_per_sample: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_updates_per_sample: 1000,
        }
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("kernel inputs of length {} and {}", x.len(), y.len())));
    }
    Ok((-gamma * sq_dist(x, y)).exp())
}

/// Full kernel matrix, row-major `n × n`.
pub fn kernel_matrix(x: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (-gamma * sq_dist(&x[i], &x[j])).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Lazily filled kernel rows.
struct KernelCache<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64) -> Self {
        Self {
            x,
            gamma,
            rows: vec![None; x.len()],
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if self.rows[i].is_none() {
            let xi = &self.x[i];
            self.rows[i] = Some(self.x.iter().map(|xj| (-self.gamma * sq_dist(xi, xj)).exp()).collect());
        }
        self.rows[i].as_deref().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub hyper: SvmHyper,
}

impl BinarySvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * (-self.hyper.gamma * sq_dist(sv, x)).exp())
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.decision(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// A trained binary model together with the full dual solution, for auditing.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub model: BinarySvmModel,
    pub alpha: Vec<f64>,
    pub updates: usize,
    pub converged: bool,
}

pub fn train_binary(x: &[Vec<f64>], y: &[f64], hyper: SvmHyper) -> Result<BinarySvmModel> {
    Ok(train_binary_with(x, y, hyper, &SmoParams::default())?.model)
}

pub fn train_binary_with(x: &[Vec<f64>], y: &[f64], hyper: SvmHyper, params: &SmoParams) -> Result<BinaryFit> {
    hyper.validate()?;
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "binary SVM needs at least 2 samples with one label each (got {n} rows, {} labels)",
            y.len()
        )));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("binary labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::InvalidArgument("binary SVM needs both classes present".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows have different lengths".into()));
    }

    let c = hyper.c;
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];
    let mut cache = KernelCache::new(x, hyper.gamma);
    let diag = 1.0; // RBF: K(x, x) = 1
    let max_updates = params.max_updates_per_sample.saturating_mul(n).max(1);
    let mut updates = 0;
    let mut converged = false;

    loop {
        let mut i = usize::MAX;
        let mut m = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut big_m = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if up && v > m {
                m = v;
                i = t;
            }
            if low && v < big_m {
                big_m = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || m - big_m < params.tol {
            converged = true;
            break;
        }
        if updates >= max_updates {
            break;
        }

        let k_ij = cache.row(i)[j];
        let curvature = (diag + diag - 2.0 * k_ij).max(1e-12);
        // Move along α_i += y_i t, α_j −= y_j t, keeping Σ y α fixed.
        let room_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = ((m - big_m) / curvature).min(room_i).min(room_j);
        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        // Snap to the box to avoid drifting just outside it.
        for t in [i, j] {
            if alpha[t] < 1e-14 * c {
                alpha[t] = 0.0;
            } else if alpha[t] > c * (1.0 - 1e-14) {
                alpha[t] = c;
            }
        }

        let row_i = cache.row(i).to_vec();
        let row_j = cache.row(j);
        for k in 0..n {
            grad[k] += y[k] * step * (row_i[k] - row_j[k]);
        }
        updates += 1;
    }

    // ρ from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(x[t].clone());
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    Ok(BinaryFit {
        model: BinarySvmModel {
            support_vectors,
            dual_coef,
            bias: -rho,
            hyper,
        },
        alpha,
        updates,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    /// Index into `classes` of the class with positive decision values.
    pub positive: usize,
    pub negative: usize,
    pub model: BinarySvmModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub schema_version: u32,
    pub hyper: SvmHyper,
    /// Original label of each class position, ascending.
    pub classes: Vec<usize>,
    pub standardizer: Standardizer,
    pub pairs: Vec<PairModel>,
}

pub fn train_multiclass(x: &[Vec<f64>], labels: &[usize], hyper: SvmHyper) -> Result<SvmModel> {
    train_multiclass_with(x, labels, hyper, &SmoParams::default())
}

pub fn train_multiclass_with(
    x: &[Vec<f64>],
    labels: &[usize],
    hyper: SvmHyper,
    params: &SmoParams,
) -> Result<SvmModel> {
    hyper.validate()?;
    if x.len() != labels.len() {
        return Err(Error::Shape("one label per row required".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("multiclass SVM needs at least 2 classes".into()));
    }
    let standardizer = Standardizer::fit_rows(x)?;
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| standardizer.transform_row(r))
        .collect::<Result<_>>()?;
    let pair_list: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, b)))
        .collect();
    let pairs = pair_list
        .par_iter()
        .map(|&(a, b)| {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (row, &l) in z.iter().zip(labels) {
                if l == classes[a] {
                    xs.push(row.clone());
                    ys.push(1.0);
                } else if l == classes[b] {
                    xs.push(row.clone());
                    ys.push(-1.0);
                }
            }
            let fit = train_binary_with(&xs, &ys, hyper, params)?;
            Ok(PairModel {
                positive: a,
                negative: b,
                model: fit.model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SvmModel {
        schema_version: MODEL_SCHEMA_VERSION,
        hyper,
        classes,
        standardizer,
        pairs,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SvmModel {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Scores for one raw (unstandardised) feature row, indexed by class position.
    pub fn scores_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let z = self.standardizer.transform_row(row)?;
        let k = self.classes.len();
        let mut votes = vec![0.0; k];
        let mut sums = vec![0.0; k];
        for p in &self.pairs {
            let d = p.model.decision(&z);
            if d >= 0.0 {
                votes[p.positive] += 1.0;
            } else {
                votes[p.negative] += 1.0;
            }
            sums[p.positive] += d;
            sums[p.negative] -= d;
        }
        Ok(votes
            .iter()
            .zip(&sums)
            .map(|(v, s)| v + sigmoid(*s) / (k as f64 + 1.0))
            .collect())
    }

    pub fn predict_scores(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        x.iter().map(|r| self.scores_row(r)).collect()
    }

    /// Predicted original labels (argmax, lowest class position on ties).
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self
            .predict_scores(x)?
            .iter()
            .map(|s| self.classes[argmax(s)])
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SvmModel = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported SVM model version {}", m.schema_version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Default search grid: C ∈ {0.1, 1, 10, 100}, γ ∈ {0.001, 0.01, 0.1, 1}/d.
pub fn default_grid(dim: usize) -> Vec<SvmHyper> {
    let d = dim.max(1) as f64;
    let mut grid = Vec::new();
    for c in [0.1, 1.0, 10.0, 100.0] {
        for g in [0.001, 0.01, 0.1, 1.0] {
            grid.push(SvmHyper { c, gamma: g / d });
        }
    }
    grid
}

/// Stratified train/validation index split with `val_frac` of each class held out.
pub fn stratified_holdout(labels: &[usize], val_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for &cls in &classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == cls).collect();
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {cls} has {} sample(s); cross-validation needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut stream(seed, &[cls as u64]));
        let n_val = ((val_frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best: SvmHyper,
    /// Mean validation accuracy of every grid point, in grid order.
    pub scores: Vec<(SvmHyper, f64)>,
}

pub const CV_VALIDATION_FRACTION: f64 = 0.2;
pub const DEFAULT_CV_ITERATIONS: usize = 5;

/// Grid search over stratified shuffled 80/20 splits. Ties go to smaller C, then smaller γ.
pub fn cross_validate(
    x: &[Vec<f64>],
    labels: &[usize],
    grid: &[SvmHyper],
    n_iter: usize,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    if n_iter < 1 {
        return Err(Error::InvalidArgument("cross-validation needs at least 1 iteration".into()));
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..n_iter)
        .map(|it| stratified_holdout(labels, CV_VALIDATION_FRACTION, crate::rng::derive_seed(seed, &[it as u64])))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..n_iter).map(move |s| (g, s)))
        .collect();
    let accs = jobs
        .par_iter()
        .map(|&(g, s)| {
            let (tr, va) = &splits[s];
            let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
            let model = train_multiclass(&xt, &yt, grid[g])?;
            let xv: Vec<Vec<f64>> = va.iter().map(|&i| x[i].clone()).collect();
            let pred = model.predict(&xv)?;
            let correct = pred.iter().zip(va).filter(|(p, &i)| **p == labels[i]).count();
            Ok(correct as f64 / va.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let scores: Vec<(SvmHyper, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, h)| (*h, accs[g * n_iter..(g + 1) * n_iter].iter().sum::<f64>() / n_iter as f64))
        .collect();
    let best = scores
        .iter()
        .copied()
        .reduce(|best, cand| {
            let better = cand.1 > best.1
                || (cand.1 == best.1
                    && (cand.0.c < best.0.c || (cand.0.c == best.0.c && cand.0.gamma < best.0.gamma)));
            if better {
                cand
            } else {
                best
            }
        })
        .unwrap()
        .0;
    Ok(CvResult { best, scores })
}

/// Outcome of one holdout → cross-validate → fit → test evaluation.
#[derive(Debug, Clone)]
pub struct SvmRun {
    pub model: SvmModel,
    pub cv: CvResult,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub report: MetricsReport,
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.15;

/// Holds out `test_frac` of each class, selects hyperparameters by cross-validation
/// on the rest, refits on all of it and scores the held-out rows.
pub fn fit_and_evaluate(
    x: &[Vec<f64>],
    labels: &[usize],
    grid: &[SvmHyper],
    n_iter: usize,
    test_frac: f64,
    seed: u64,
) -> Result<SvmRun> {
    if x.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", x.len(), labels.len())));
    }
    let (train, test) = stratified_holdout(labels, test_frac, crate::rng::derive_seed(seed, &[0x7e57]))?;
    let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let cv = cross_validate(&xt, &yt, grid, n_iter, seed)?;
    let model = train_multiclass(&xt, &yt, cv.best)?;
    if model.classes.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(Error::InvalidArgument("labels must be 0..K with every class present".into()));
    }
    let xs: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let report = evaluate(&model.predict_scores(&xs)?, &ys)?;
    Ok(SvmRun {
        model,
        cv,
        train,
        test,
        report,
    })
}
