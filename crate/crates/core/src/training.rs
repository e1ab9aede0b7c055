//! Stratified splitting, label-preserving augmentation and the network training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdc::{normalize_max, Datacube};
use crate::metrics::{evaluate, MetricsReport};
use crate::rng::{stream, StreamRng};
use crate::tensornet::{build_network, AdamHyper, ArchConfig, Batch, Family, Network};

/// Disjoint sample indices, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(train, validation, test)` fractions of the paper's protocol.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.65, 0.20, 0.15);

/// Per class: `round(test·n)` test samples and `round(val·n)` validation samples drawn
/// by a seeded shuffle; the remainder trains.
pub fn split_dataset(labels: &[usize], fractions: (f64, f64, f64), seed: u64) -> Result<SplitPlan> {
    let (tr, va, te) = fractions;
    if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut plan = SplitPlan {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} samples; splitting needs at least 3",
                idx.len()
            )));
        }
        let n = idx.len() as f64;
        let n_test = (te * n).round() as usize;
        let n_val = (va * n).round() as usize;
        if n_test + n_val > idx.len() {
            return Err(Error::InvalidArgument(format!("class {class} too small for fractions {fractions:?}")));
        }
        idx.shuffle(&mut stream(seed, &[0x5b17, class as u64]));
        plan.test.extend_from_slice(&idx[..n_test]);
        plan.validation.extend_from_slice(&idx[n_test..n_test + n_val]);
        plan.train.extend_from_slice(&idx[n_test + n_val..]);
    }
    plan.train.sort_unstable();
    plan.validation.sort_unstable();
    plan.test.sort_unstable();
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub allow_hflip: bool,
    pub allow_vflip: bool,
    pub max_shift_fraction: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            allow_hflip: true,
            allow_vflip: true,
            max_shift_fraction: 0.04,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.max_shift_fraction) {
            return Err(Error::Config(format!(
                "max_shift_fraction {} outside [0, 0.5)",
                self.max_shift_fraction
            )));
        }
        Ok(())
    }

    /// Largest absolute shift `(rows, cols)` for an `h × w` cube.
    pub fn shift_bounds(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (self.max_shift_fraction * h as f64).floor() as usize,
            (self.max_shift_fraction * w as f64).floor() as usize,
        )
    }
}

/// One sampled transform: flips first, then a shift with zero fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub dr: isize,
    pub dc: isize,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        hflip: false,
        vflip: false,
        dr: 0,
        dc: 0,
    };
}

pub fn sample_draw(params: &AugmentParams, h: usize, w: usize, rng: &mut StreamRng) -> AugmentDraw {
    let hflip = rng.random_bool(0.5);
    let vflip = rng.random_bool(0.5);
    let (br, bc) = params.shift_bounds(h, w);
    let dr = rng.random_range(-(br as i64)..=br as i64) as isize;
    let dc = rng.random_range(-(bc as i64)..=bc as i64) as isize;
    AugmentDraw {
        hflip: hflip && params.allow_hflip,
        vflip: vflip && params.allow_vflip,
        dr,
        dc,
    }
}

/// Applies `draw` to a band-interleaved `h × w × b` buffer.
fn apply_draw_values(src: &[f64], (h, w, b): (usize, usize, usize), draw: AugmentDraw, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..h {
        let sr = r as isize - draw.dr;
        if sr < 0 || sr >= h as isize {
            continue;
        }
        let sr = if draw.vflip { h - 1 - sr as usize } else { sr as usize };
        for c in 0..w {
            let sc = c as isize - draw.dc;
            if sc < 0 || sc >= w as isize {
                continue;
            }
            let sc = if draw.hflip { w - 1 - sc as usize } else { sc as usize };
            out[(r * w + c) * b..][..b].copy_from_slice(&src[(sr * w + sc) * b..][..b]);
        }
    }
}

pub fn apply_draw(cube: &Datacube, draw: AugmentDraw) -> Datacube {
    let mut out = vec![0.0; cube.values().len()];
    apply_draw_values(cube.values(), cube.dims(), draw, &mut out);
    cube.with_values(out).expect("same length")
}

/// Random flips (probability ½ each, if allowed) and a uniform integer shift
/// bounded by `⌊f·dim⌋`; vacated pixels are zero and the spectral axis is untouched.
pub fn augment(cube: &Datacube, params: &AugmentParams, rng: &mut StreamRng) -> Datacube {
    let draw = sample_draw(params, cube.height(), cube.width(), rng);
    apply_draw(cube, draw)
}

pub const DEFAULT_AUGMENT_FACTOR: usize = 11;

pub const DESK_LR0: f64 = 0.02;
pub const DESK_EPOCHS: usize = 10;

/// Each source cube followed by `factor − 1` augmented variants, with labels.
pub fn expand_training_set(
    cubes: &[Datacube],
    labels: &[usize],
    params: &AugmentParams,
    factor: usize,
    seed: u64,
) -> Result<(Vec<Datacube>, Vec<usize>)> {
    if factor < 1 {
        return Err(Error::InvalidArgument("augmentation factor must be at least 1".into()));
    }
    if cubes.len() != labels.len() {
        return Err(Error::Shape(format!("{} cubes vs {} labels", cubes.len(), labels.len())));
    }
    let mut out = Vec::with_capacity(cubes.len() * factor);
    let mut out_labels = Vec::with_capacity(cubes.len() * factor);
    for (i, (cube, &label)) in cubes.iter().zip(labels).enumerate() {
        out.push(cube.clone());
        out_labels.push(label);
        let mut rng = stream(seed, &[0xa06, i as u64]);
        for _ in 1..factor {
            out.push(augment(cube, params, &mut rng));
            out_labels.push(label);
        }
    }
    Ok((out, out_labels))
}

/// Same samples as [`expand_training_set`], written straight into a batch.
fn expand_into_batch(cubes: &[&Datacube], params: &AugmentParams, factor: usize, seed: u64) -> Result<Batch> {
    let (h, w, b) = cubes[0].dims();
    let len = h * w * b;
    let mut values = vec![0.0; cubes.len() * factor * len];
    for (i, cube) in cubes.iter().enumerate() {
        let base = i * factor * len;
        values[base..base + len].copy_from_slice(cube.values());
        let mut rng = stream(seed, &[0xa06, i as u64]);
        for k in 1..factor {
            let draw = sample_draw(params, h, w, &mut rng);
            apply_draw_values(cube.values(), (h, w, b), draw, &mut values[base + k * len..][..len]);
        }
    }
    Batch::new(cubes.len() * factor, h, w, b, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub enabled: bool,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            enabled: false,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default)]
    pub augment: AugmentParams,
    #[serde(default = "default_factor")]
    pub augment_factor: usize,
    #[serde(default)]
    pub early_stopping: EarlyStopping,
    /// Train on the training and validation splits together (final-fit protocol).
    #[serde(default)]
    pub fit_on_train_and_val: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_factor() -> usize {
    DEFAULT_AUGMENT_FACTOR
}

impl TrainConfig {
    pub fn new(arch: ArchConfig) -> Self {
        Self {
            arch,
            adam: AdamHyper::default(),
            augment: AugmentParams::default(),
            augment_factor: DEFAULT_AUGMENT_FACTOR,
            early_stopping: EarlyStopping::default(),
            fit_on_train_and_val: false,
            seed: 0,
        }
    }

    /// Desk-scale run: the family's desk architecture, a larger initial step
    /// (the per-update decay otherwise stalls training within a few epochs of an
    /// 11-fold expanded set) and a short schedule.
    pub fn desk(family: Family, input_dims: [usize; 3], num_classes: usize) -> Self {
        let mut cfg = Self::new(ArchConfig::desk(family, input_dims, num_classes));
        cfg.adam.lr0 = DESK_LR0;
        cfg.adam.epochs = DESK_EPOCHS;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.adam.validate()?;
        self.augment.validate()?;
        if self.augment_factor < 1 {
            return Err(Error::Config("augment_factor must be at least 1".into()));
        }
        if self.early_stopping.enabled && self.early_stopping.patience < 1 {
            return Err(Error::Config("early-stopping patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored by early stopping.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.8},{:.8},{},{}",
                e.epoch,
                e.train_loss,
                e.train_acc,
                opt(e.val_loss),
                opt(e.val_acc)
            );
        }
        s
    }
}

fn normalized(cubes: &[Datacube], idx: &[usize]) -> Result<Vec<Datacube>> {
    idx.iter().map(|&i| normalize_max(&cubes[i])).collect()
}

/// Mean cross-entropy and accuracy of probability rows.
fn prob_loss_acc(probs: &Batch, labels: &[usize]) -> (f64, f64) {
    let k = probs.c;
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &l) in probs.values.chunks_exact(k).zip(labels) {
        loss -= row[l].max(f64::MIN_POSITIVE).ln();
        if crate::metrics::ranked_classes(row)[0] == l {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    (loss / n, correct as f64 / n)
}

const INFERENCE_CHUNK: usize = 64;

fn predict_normalized(net: &Network, batch: &Batch) -> Result<Batch> {
    let mut values = Vec::with_capacity(batch.n * net.num_classes());
    for start in (0..batch.n).step_by(INFERENCE_CHUNK) {
        let idx: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(batch.n)).collect();
        values.extend(net.predict_proba(&batch.select(&idx))?.values);
    }
    Batch::new(batch.n, 1, 1, net.num_classes(), values)
}

/// Trains `net` on the plan's training split (plus validation when configured).
///
/// Cubes are max-normalised, then augmented into a fixed expanded set. Each epoch
/// visits that set in a shuffled order derived from `(seed, epoch)`. With early
/// stopping, training halts after `patience` epochs without a new validation-loss
/// minimum and the best parameters are restored.
pub fn train(
    mut net: Network,
    cubes: &[Datacube],
    labels: &[usize],
    plan: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.adam.validate()?;
    cfg.augment.validate()?;
    if cubes.len() != labels.len() {
        return Err(Error::Shape(format!("{} cubes vs {} labels", cubes.len(), labels.len())));
    }
    if let Some(&bad) = plan.train.iter().chain(&plan.validation).chain(&plan.test).find(|&&i| i >= cubes.len()) {
        return Err(Error::InvalidArgument(format!("split index {bad} outside the dataset")));
    }
    let mut train_idx = plan.train.clone();
    if cfg.fit_on_train_and_val {
        train_idx.extend_from_slice(&plan.validation);
        train_idx.sort_unstable();
    }
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let train_cubes = normalized(cubes, &train_idx)?;
    let train_refs: Vec<&Datacube> = train_cubes.iter().collect();
    let x_train = expand_into_batch(&train_refs, &cfg.augment, cfg.augment_factor, cfg.seed)?;
    drop(train_cubes);
    let y_train: Vec<usize> = train_idx
        .iter()
        .flat_map(|&i| std::iter::repeat_n(labels[i], cfg.augment_factor))
        .collect();

    let monitor = !cfg.fit_on_train_and_val && !plan.validation.is_empty();
    let val = if monitor {
        let v = normalized(cubes, &plan.validation)?;
        let y: Vec<usize> = plan.validation.iter().map(|&i| labels[i]).collect();
        Some((Batch::from_cubes(&v)?, y))
    } else {
        None
    };

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut since_best = 0;
    let bs = cfg.adam.batch_size;
    for epoch in 0..cfg.adam.epochs {
        let mut order: Vec<usize> = (0..x_train.n).collect();
        order.shuffle(&mut stream(cfg.seed, &[0xe90c, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(bs) {
            let xb = x_train.select(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let (loss, c) = net.train_batch(&xb, &yb, &cfg.adam)?;
            loss_sum += loss * chunk.len() as f64;
            correct += c;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / x_train.n as f64,
            train_acc: correct as f64 / x_train.n as f64,
            val_loss: None,
            val_acc: None,
        };
        if let Some((xv, yv)) = &val {
            let (vl, va) = prob_loss_acc(&predict_normalized(&net, xv)?, yv);
            record.val_loss = Some(vl);
            record.val_acc = Some(va);
            if cfg.early_stopping.enabled {
                if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                    net.clear_cache();
                    best = Some((vl, epoch, net.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        history.epochs.push(record);
        if cfg.early_stopping.enabled && since_best >= cfg.early_stopping.patience {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, epoch, best_net)) = best {
        net = best_net;
        history.best_epoch = Some(epoch);
    }
    net.clear_cache();
    Ok((net, history))
}

/// Inference-mode class probabilities for raw cubes (max-normalised here), one row per cube.
pub fn predict_batch(net: &Network, cubes: &[Datacube]) -> Result<Vec<Vec<f64>>> {
    if cubes.is_empty() {
        return Ok(Vec::new());
    }
    let norm: Vec<Datacube> = cubes.iter().map(normalize_max).collect::<Result<_>>()?;
    let probs = predict_normalized(net, &Batch::from_cubes(&norm)?)?;
    Ok(probs.values.chunks_exact(probs.c).map(<[f64]>::to_vec).collect())
}

/// Outcome of one split → train → test evaluation.
#[derive(Debug, Clone)]
pub struct CnnRun {
    pub net: Network,
    pub history: TrainHistory,
    pub plan: SplitPlan,
    pub test_probs: Vec<Vec<f64>>,
    pub report: MetricsReport,
}

/// Splits with `split_seed`, builds `cfg.arch` with `cfg.seed`, trains and evaluates on the test split.
pub fn train_and_evaluate(
    cubes: &[Datacube],
    labels: &[usize],
    cfg: &TrainConfig,
    fractions: (f64, f64, f64),
    split_seed: u64,
) -> Result<CnnRun> {
    cfg.validate()?;
    let plan = split_dataset(labels, fractions, split_seed)?;
    let net = build_network(&cfg.arch, cfg.seed)?;
    let (net, history) = train(net, cubes, labels, &plan, cfg)?;
    let test_cubes: Vec<Datacube> = plan.test.iter().map(|&i| cubes[i].clone()).collect();
    let test_labels: Vec<usize> = plan.test.iter().map(|&i| labels[i]).collect();
    let test_probs = predict_batch(&net, &test_cubes)?;
    let report = evaluate(&test_probs, &test_labels)?;
    Ok(CnnRun {
        net,
        history,
        plan,
        test_probs,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::Mode;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy_cubes(n: usize, seed: u64) -> (Vec<Datacube>, Vec<usize>) {
        let mut rng = stream(seed, &[]);
        let mut cubes = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let values = (0..6 * 8 * 4)
                .map(|j| {
                    let band = j % 4;
                    let signal = if band == label { 0.6 } else { 0.3 };
                    signal + rng.random_range(0.0..0.3)
                })
                .collect();
            cubes.push(Datacube::new(6, 8, 4, 900.0, 10.0, values).unwrap());
            labels.push(label);
        }
        (cubes, labels)
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(ArchConfig::desk(Family::ResnetB, [6, 8, 4], 2));
        cfg.adam.epochs = epochs;
        cfg.augment_factor = 1;
        cfg
    }

    #[test]
    fn paper_split_counts() {
        let labels: Vec<usize> = (0..232 * 3).map(|i| i / 232).collect();
        let plan = split_dataset(&labels, DEFAULT_SPLIT, 1).unwrap();
        for class in 0..3 {
            let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(count(&plan.test), 35);
            assert_eq!(count(&plan.validation), 46);
            assert_eq!(count(&plan.train), 151);
        }
        let all = split_dataset(&labels, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(all.train, (0..labels.len()).collect::<Vec<_>>());
        assert!(all.validation.is_empty() && all.test.is_empty());
    }

    #[test]
    fn split_seeds() {
        let labels: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let a = split_dataset(&labels, DEFAULT_SPLIT, 3).unwrap();
        assert_eq!(a, split_dataset(&labels, DEFAULT_SPLIT, 3).unwrap());
        let b = split_dataset(&labels, DEFAULT_SPLIT, 4).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.test.len(), b.test.len());
        assert!(split_dataset(&[0, 0, 1, 1, 1], DEFAULT_SPLIT, 0).is_err());
        assert!(split_dataset(&labels, (0.5, 0.2, 0.2), 0).is_err());
    }

    proptest! {
        #[test]
        fn splits_are_exhaustive_disjoint_and_stratified(
            counts in proptest::collection::vec(3usize..40, 1..5),
            seed in 0u64..1000,
            val in 0.0f64..0.4,
            test in 0.0f64..0.4,
        ) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let plan = split_dataset(&labels, (1.0 - val - test, val, test), seed).unwrap();
            let mut all: Vec<usize> = plan.train.iter().chain(&plan.validation).chain(&plan.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in counts.iter().enumerate() {
                let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == c).count();
                prop_assert_eq!(count(&plan.test), (test * n as f64).round() as usize);
                prop_assert_eq!(count(&plan.validation), (val * n as f64).round() as usize);
            }
        }
    }

    fn random_cube(h: usize, w: usize, b: usize, seed: u64) -> Datacube {
        let mut rng = stream(seed, &[]);
        Datacube::new(h, w, b, 900.0, 5.0, (0..h * w * b).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
    }

    #[test]
    fn shift_bounds_at_paper_size() {
        let p = AugmentParams::default();
        assert_eq!(p.shift_bounds(50, 170), (2, 6));
        let mut rng = stream(0, &[]);
        let (mut max_r, mut max_c) = (0, 0);
        for _ in 0..10_000 {
            let d = sample_draw(&p, 50, 170, &mut rng);
            max_r = max_r.max(d.dr.unsigned_abs());
            max_c = max_c.max(d.dc.unsigned_abs());
        }
        assert_eq!((max_r, max_c), (2, 6));
    }

    #[test]
    fn flips_are_involutions_and_identity_is_identity() {
        let cube = random_cube(5, 7, 3, 1);
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let d = AugmentDraw { hflip: h, vflip: v, dr: 0, dc: 0 };
            let once = apply_draw(&cube, d);
            assert_ne!(once, cube);
            assert_eq!(apply_draw(&once, d), cube);
        }
        assert_eq!(apply_draw(&cube, AugmentDraw::IDENTITY), cube);
    }

    #[test]
    fn shift_moves_content_and_zero_fills() {
        let cube = random_cube(5, 7, 2, 2);
        let d = AugmentDraw { hflip: false, vflip: false, dr: 1, dc: -2 };
        let out = apply_draw(&cube, d);
        for r in 0..5 {
            for c in 0..7 {
                let (sr, sc) = (r as isize - 1, c as isize + 2);
                let inside = (0..5).contains(&sr) && (0..7).contains(&sc);
                for b in 0..2 {
                    let expected = if inside { cube.get(sr as usize, sc as usize, b) } else { 0.0 };
                    assert_eq!(out.get(r, c, b), expected);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn pure_flips_preserve_the_value_multiset(seed in 0u64..500, h in any::<bool>(), v in any::<bool>()) {
            let cube = random_cube(4, 6, 3, seed);
            let out = apply_draw(&cube, AugmentDraw { hflip: h, vflip: v, dr: 0, dc: 0 });
            let mut a = cube.values().to_vec();
            let mut b = out.values().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn augmented_cubes_match_some_transform(seed in 0u64..500) {
            let cube = random_cube(9, 26, 2, seed);
            let p = AugmentParams::default();
            let mut rng = stream(seed, &[9]);
            let out = augment(&cube, &p, &mut rng);
            let (br, bc) = p.shift_bounds(9, 26);
            let mut found = false;
            for hflip in [false, true] {
                for vflip in [false, true] {
                    for dr in -(br as isize)..=br as isize {
                        for dc in -(bc as isize)..=bc as isize {
                            found |= apply_draw(&cube, AugmentDraw { hflip, vflip, dr, dc }) == out;
                        }
                    }
                }
            }
            prop_assert!(found);
        }
    }

    #[test]
    fn expansion_counts_and_labels() {
        let cubes: Vec<Datacube> = (0..10).map(|i| random_cube(4, 30, 2, i)).collect();
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let (out, out_labels) = expand_training_set(&cubes, &labels, &AugmentParams::default(), 11, 5).unwrap();
        assert_eq!(out.len(), 110);
        for (i, chunk) in out_labels.chunks(11).enumerate() {
            assert!(chunk.iter().all(|&l| l == labels[i]));
        }
        let (once, _) = expand_training_set(&cubes, &labels, &AugmentParams::default(), 1, 5).unwrap();
        assert_eq!(once, cubes);

        let refs: Vec<&Datacube> = cubes.iter().collect();
        let batch = expand_into_batch(&refs, &AugmentParams::default(), 11, 5).unwrap();
        assert_eq!(Batch::from_cubes(&out).unwrap(), batch);
    }

    #[test]
    fn overfits_a_tiny_set() {
        let (cubes, labels) = toy_cubes(10, 3);
        let plan = split_dataset(&labels, (1.0, 0.0, 0.0), 0).unwrap();
        let net = build_network(&toy_config(200).arch, 1).unwrap();
        let (net, history) = train(net, &cubes, &labels, &plan, &toy_config(200)).unwrap();
        assert_eq!(history.epochs.len(), 200);
        let probs = predict_batch(&net, &cubes).unwrap();
        let pred: Vec<usize> = probs.iter().map(|r| crate::metrics::ranked_classes(r)[0]).collect();
        assert_eq!(pred, labels);
        let first: Vec<f64> = history.epochs[..5].iter().map(|e| e.train_loss).collect();
        let mut running = Vec::new();
        for i in 0..5 {
            running.push(first[..=i].iter().sum::<f64>() / (i + 1) as f64);
        }
        assert!(running.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{first:?}");
        for row in &probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (cubes, labels) = toy_cubes(12, 4);
        let plan = split_dataset(&labels, DEFAULT_SPLIT, 2).unwrap();
        let mut cfg = toy_config(3);
        cfg.augment_factor = 3;
        let run = || {
            let net = build_network(&cfg.arch, 9).unwrap();
            train(net, &cubes, &labels, &plan, &cfg).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(a.running_stats(), b.running_stats());
        assert_eq!(ha, hb);
        assert_eq!(ha.to_csv().lines().count(), 4);
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let (cubes, labels) = toy_cubes(8, 5);
        // The validation half repeats the training cubes with swapped labels,
        // so validation loss climbs while the training loss falls.
        let mut all_cubes = cubes.clone();
        all_cubes.extend(cubes.iter().cloned());
        let mut all_labels = labels.clone();
        all_labels.extend(labels.iter().map(|l| 1 - l));
        let plan = SplitPlan {
            train: (0..8).collect(),
            validation: (8..16).collect(),
            test: Vec::new(),
        };
        let mut cfg = toy_config(100);
        cfg.early_stopping = EarlyStopping { enabled: true, patience: 5 };
        let net = build_network(&cfg.arch, 2).unwrap();
        let (net, history) = train(net, &all_cubes, &all_labels, &plan, &cfg).unwrap();
        assert!(history.stopped_early);
        let best = history.best_epoch.unwrap();
        let min = history.epochs.iter().filter_map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(history.epochs[best].val_loss, Some(min));
        assert_eq!(history.epochs.len(), best + 1 + 5);
        let val_cubes: Vec<Datacube> = plan.validation.iter().map(|&i| all_cubes[i].clone()).collect();
        let val_labels: Vec<usize> = plan.validation.iter().map(|&i| all_labels[i]).collect();
        let probs = predict_batch(&net, &val_cubes).unwrap();
        let restored = Batch::new(probs.len(), 1, 1, 2, probs.concat()).unwrap();
        assert_eq!(prob_loss_acc(&restored, &val_labels).0, min);
    }

    #[test]
    fn duplicate_and_permuted_inputs() {
        let (cubes, labels) = toy_cubes(6, 6);
        let plan = split_dataset(&labels, (1.0, 0.0, 0.0), 0).unwrap();
        let (net, _) = train(build_network(&toy_config(2).arch, 0).unwrap(), &cubes, &labels, &plan, &toy_config(2)).unwrap();
        let dup = vec![cubes[0].clone(), cubes[1].clone(), cubes[0].clone()];
        let p = predict_batch(&net, &dup).unwrap();
        assert_eq!(p[0], p[2]);
        let rev: Vec<Datacube> = cubes.iter().rev().cloned().collect();
        let forward = predict_batch(&net, &cubes).unwrap();
        let backward = predict_batch(&net, &rev).unwrap();
        for (i, row) in backward.iter().enumerate() {
            assert_eq!(row, &forward[cubes.len() - 1 - i]);
        }
        assert!(net.clone().forward(&Batch::from_cubes(&cubes[..1]).unwrap(), Mode::Infer).is_ok());
    }

    #[test]
    fn empty_training_split_rejected() {
        let (cubes, labels) = toy_cubes(4, 1);
        let plan = SplitPlan { train: vec![], validation: vec![0, 1], test: vec![2, 3] };
        let net = build_network(&toy_config(1).arch, 0).unwrap();
        assert!(train(net, &cubes, &labels, &plan, &toy_config(1)).is_err());
    }
}
