//! Mean-softmax ensembles and vanilla gradient saliency maps.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsdc::{normalize_max, Datacube};
use crate::tensornet::{Batch, Mode, Network};
use crate::training::predict_batch;

/// Mean of the members' softmax rows for each cube.
pub fn ensemble_predict(models: &[&Network], cubes: &[Datacube]) -> Result<Vec<Vec<f64>>> {
    let (first, rest) = models
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one model".into()))?;
    for m in rest {
        if m.num_classes() != first.num_classes() {
            return Err(Error::Shape(format!(
                "ensemble members disagree on class count: {} vs {}",
                first.num_classes(),
                m.num_classes()
            )));
        }
        if m.input_shape() != first.input_shape() {
            return Err(Error::Shape(format!(
                "ensemble members disagree on input shape: {:?} vs {:?}",
                first.input_shape(),
                m.input_shape()
            )));
        }
    }
    let members = models.iter().map(|m| predict_batch(m, cubes)).collect::<Result<Vec<_>>>()?;
    ensemble_mean(&members)
}

/// Mean of member probability rows, computed as `p₁ + Σᵢ (pᵢ − p₁)/m` so that
/// identical members reproduce `p₁` bit for bit.
pub fn ensemble_mean(members: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let (first, rest) = members
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one model".into()))?;
    let scale = members.len() as f64;
    let mut mean = first.clone();
    for probs in rest {
        if probs.len() != first.len() {
            return Err(Error::Shape(format!("{} rows vs {}", probs.len(), first.len())));
        }
        for (row, (p, p0)) in mean.iter_mut().zip(probs.iter().zip(first)) {
            if p.len() != p0.len() {
                return Err(Error::Shape(format!("{} classes vs {}", p.len(), p0.len())));
            }
            for (acc, (&v, &v0)) in row.iter_mut().zip(p.iter().zip(p0)) {
                *acc += (v - v0) / scale;
            }
        }
    }
    Ok(mean)
}

/// Per-pixel sensitivity of one class score, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub target: usize,
}

impl SaliencyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Mean over pixels where `mask` is true; `None` if the mask selects nothing.
    pub fn mean_where(&self, mask: &[bool]) -> Option<f64> {
        assert_eq!(mask.len(), self.values.len());
        let (sum, n) = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Min–max scaled to 0..=255; a constant map becomes all zeros.
    pub fn to_gray8(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }

    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_gray8())?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_pgm(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// One line per image row, raw values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks_exact(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Parses a binary PGM written by [`SaliencyMap::write_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ends early"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let pixels = &bytes[(pos + 1).min(bytes.len())..];
    if pixels.len() != w * h {
        return Err(Error::Truncated {
            expected: (w * h) as u64,
            found: pixels.len() as u64,
        });
    }
    Ok((w, h, pixels.to_vec()))
}

/// `max_b |∂ score_target / ∂ x(r, c, b)|` on the max-normalised cube, inference mode.
/// `target` defaults to the predicted class.
pub fn saliency_map(net: &Network, cube: &Datacube, target: Option<usize>) -> Result<SaliencyMap> {
    let x = Batch::from_cubes([&normalize_max(cube)?])?;
    let mut net = net.clone();
    let logits = net.forward_logits(&x, Mode::Infer)?;
    let k = logits.c;
    let target = match target {
        Some(t) if t >= k => {
            return Err(Error::InvalidArgument(format!("class {t} out of range for {k} classes")));
        }
        Some(t) => t,
        None => crate::metrics::ranked_classes(&logits.values)[0],
    };
    let mut onehot = vec![0.0; k];
    onehot[target] = 1.0;
    let dx = net
        .backward(&logits.with_values(onehot), true)?
        .ok_or_else(|| Error::Numerical("input gradient unavailable".into()))?;
    let values = dx
        .values
        .chunks_exact(dx.c)
        .map(|px| px.iter().fold(0.0_f64, |m, g| m.max(g.abs())))
        .collect();
    Ok(SaliencyMap {
        height: dx.h,
        width: dx.w,
        values,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensornet::{ArchConfig, ConvShape, Family, LayerSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_cube(h: usize, w: usize, b: usize, seed: u64) -> Datacube {
        let mut rng = stream(seed, &[]);
        let values = (0..h * w * b).map(|_| rng.random_range(0.05..1.0)).collect();
        Datacube::new(h, w, b, 950.0, 10.0, values).unwrap()
    }

    fn linear_model(h: usize, w: usize, b: usize, k: usize, seed: u64) -> Network {
        let layout = vec![LayerSpec::Flatten, LayerSpec::Dense { inp: h * w * b, out: k }];
        Network::from_layout((h, w, b), layout, None, seed).unwrap()
    }

    /// A net whose class probabilities do not depend on BN statistics having been trained.
    fn small_conv_model(h: usize, w: usize, b: usize, k: usize, seed: u64) -> Network {
        let layout = vec![
            LayerSpec::Conv(ConvShape { kh: 3, kw: 3, cin: b, cout: 4 }),
            LayerSpec::Swish,
            LayerSpec::MaxPool2,
            LayerSpec::Conv(ConvShape { kh: 3, kw: 3, cin: 4, cout: 4 }),
            LayerSpec::Swish,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { inp: 4, out: k },
        ];
        Network::from_layout((h, w, b), layout, None, seed).unwrap()
    }

    #[test]
    fn linear_model_saliency_is_the_weight_magnitude() {
        let (h, w, b, k) = (5, 7, 3, 4);
        let net = linear_model(h, w, b, k, 11);
        let cube = random_cube(h, w, b, 2);
        let params = net.flat_params();
        for target in 0..k {
            let map = saliency_map(&net, &cube, Some(target)).unwrap();
            assert_eq!((map.height, map.width), (h, w));
            for r in 0..h {
                for c in 0..w {
                    let expected = (0..b)
                        .map(|band| params[((r * w + c) * b + band) * k + target].abs())
                        .fold(0.0, f64::max);
                    assert!((map.get(r, c) - expected).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_first_layer_gives_zero_saliency() {
        let mut net = small_conv_model(6, 6, 3, 3, 5);
        net.first_weights_mut().unwrap().value.iter_mut().for_each(|v| *v = 0.0);
        let map = saliency_map(&net, &random_cube(6, 6, 3, 9), None).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_target_is_the_predicted_class() {
        let net = linear_model(4, 4, 2, 3, 1);
        let cube = random_cube(4, 4, 2, 4);
        let probs = predict_batch(&net, std::slice::from_ref(&cube)).unwrap();
        let map = saliency_map(&net, &cube, None).unwrap();
        assert_eq!(map.target, crate::metrics::ranked_classes(&probs[0])[0]);
        assert!(saliency_map(&net, &cube, Some(3)).is_err());
    }

    #[test]
    fn saliency_ignores_a_shared_bias_shift() {
        let net = small_conv_model(6, 6, 3, 3, 8);
        let cube = random_cube(6, 6, 3, 1);
        let mut shifted = net.clone();
        let mut p = shifted.flat_params();
        let n = p.len();
        p[n - 3..].iter_mut().for_each(|v| *v += 2.5);
        shifted.set_flat_params(&p).unwrap();
        for t in 0..3 {
            let a = saliency_map(&net, &cube, Some(t)).unwrap();
            let b = saliency_map(&shifted, &cube, Some(t)).unwrap();
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn saliency_on_a_trained_residual_net_has_cube_dims() {
        let cfg = ArchConfig::desk(Family::ResnetB, [9, 13, 4], 3);
        let mut net = crate::tensornet::build_network(&cfg, 3).unwrap();
        let cube = random_cube(9, 13, 4, 6);
        let x = Batch::from_cubes([&normalize_max(&cube).unwrap()]).unwrap();
        net.train_batch(&x, &[1], &Default::default()).unwrap();
        let map = saliency_map(&net, &cube, None).unwrap();
        assert_eq!((map.height, map.width, map.values.len()), (9, 13, 117));
        assert!(map.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn ensemble_examples() {
        let cubes: Vec<Datacube> = (0..5).map(|i| random_cube(6, 6, 3, i)).collect();
        let a = small_conv_model(6, 6, 3, 3, 1);
        let single = predict_batch(&a, &cubes).unwrap();
        assert_eq!(ensemble_predict(&[&a], &cubes).unwrap(), single);
        assert_eq!(ensemble_predict(&[&a, &a, &a], &cubes).unwrap(), single);

        let half = ensemble_mean(&[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]).unwrap();
        assert_eq!(half, vec![vec![0.5, 0.5]]);

        let b = small_conv_model(6, 6, 3, 3, 2);
        let c = small_conv_model(6, 6, 3, 3, 3);
        for row in ensemble_predict(&[&a, &b, &c], &cubes).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let other = small_conv_model(6, 6, 3, 4, 2);
        assert!(ensemble_predict(&[&a, &other], &cubes).is_err());
        assert!(ensemble_predict(&[], &cubes).is_err());
    }

    #[test]
    fn pgm_round_trip_and_scaling() {
        let map = SaliencyMap {
            height: 2,
            width: 3,
            values: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            target: 0,
        };
        let mut buf = Vec::new();
        map.write_pgm(&mut buf).unwrap();
        let (w, h, px) = read_pgm(&buf).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, vec![0, 51, 102, 153, 204, 255]);
        assert_eq!(map.to_csv().lines().count(), 2);
        assert!(read_pgm(&buf[..buf.len() - 1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ensemble_commutes_with_permutation(seed in 0u64..1000, rot in 0usize..6) {
            let cubes: Vec<Datacube> = (0..6).map(|i| random_cube(5, 5, 2, seed + i)).collect();
            let a = small_conv_model(5, 5, 2, 3, seed);
            let b = small_conv_model(5, 5, 2, 3, seed + 1);
            let base = ensemble_predict(&[&a, &b], &cubes).unwrap();
            let mut perm = cubes.clone();
            perm.rotate_left(rot);
            let moved = ensemble_predict(&[&a, &b], &perm).unwrap();
            for i in 0..6 {
                prop_assert_eq!(&moved[i], &base[(i + rot) % 6]);
            }
        }

        #[test]
        fn agreeing_members_fix_the_ensemble_argmax(rows in proptest::collection::vec(
            (proptest::collection::vec(0.01f64..1.0, 3), proptest::collection::vec(0.01f64..1.0, 3)), 1..8)) {
            // Members share the row's arg-max by construction.
            let mut m1 = Vec::new();
            let mut m2 = Vec::new();
            for (p, q) in &rows {
                let top = crate::metrics::ranked_classes(p)[0];
                let mut q = q.clone();
                q[top] = q.iter().sum::<f64>() + 1.0;
                let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
                m1.push(norm(p));
                m2.push(norm(&q));
            }
            let mean = ensemble_mean(&[m1.clone(), m2]).unwrap();
            for (row, p) in mean.iter().zip(&m1) {
                prop_assert_eq!(crate::metrics::ranked_classes(row)[0], crate::metrics::ranked_classes(p)[0]);
            }
        }
    }
}
