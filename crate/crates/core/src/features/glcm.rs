//! Gray-level co-occurrence matrices and the six texture statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdc::GrayImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlcmParams {
    pub levels: usize,
    pub distances: Vec<usize>,
    pub angles_deg: Vec<f64>,
}

impl Default for GlcmParams {
    fn default() -> Self {
        Self {
            levels: 32,
            distances: vec![1],
            angles_deg: vec![0.0, 90.0],
        }
    }
}

/// Normalised, symmetric co-occurrence distribution, `levels × levels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub levels: usize,
    pub p: Vec<f64>,
}

impl Glcm {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }
}

/// Min–max quantisation to `levels` bins. A constant image maps to level 0.
pub fn quantize(image: &GrayImage, levels: usize) -> Vec<usize> {
    let (lo, hi) = image.min_max();
    let range = hi - lo;
    image
        .values()
        .iter()
        .map(|&v| {
            if range <= 0.0 {
                0
            } else {
                (((v - lo) / range * levels as f64).floor() as usize).min(levels - 1)
            }
        })
        .collect()
}

/// Row/column displacement for a distance and angle (0° = along columns, 90° = along rows).
pub fn offset(distance: usize, angle_deg: f64) -> (isize, isize) {
    let t = angle_deg.to_radians();
    let d = distance as f64;
    ((t.sin() * d).round() as isize, (t.cos() * d).round() as isize)
}

pub fn glcm(image: &GrayImage, params: &GlcmParams) -> Result<Glcm> {
    let levels = params.levels;
    if levels < 2 {
        return Err(Error::InvalidArgument("GLCM needs at least 2 levels".into()));
    }
    if params.distances.is_empty() || params.angles_deg.is_empty() {
        return Err(Error::InvalidArgument("GLCM needs at least one distance and angle".into()));
    }
    let (h, w) = (image.height() as isize, image.width() as isize);
    let q = quantize(image, levels);
    let mut acc = vec![0.0; levels * levels];
    let mut n_offsets = 0usize;
    for &d in &params.distances {
        for &angle in &params.angles_deg {
            let (dr, dc) = offset(d, angle);
            if dr.abs() >= h || dc.abs() >= w || (dr == 0 && dc == 0) {
                return Err(Error::InvalidArgument(format!(
                    "offset ({dr}, {dc}) does not fit a {h}x{w} image"
                )));
            }
            let mut counts = vec![0u64; levels * levels];
            let mut total = 0u64;
            for r in 0..h {
                let r2 = r + dr;
                if r2 < 0 || r2 >= h {
                    continue;
                }
                for c in 0..w {
                    let c2 = c + dc;
                    if c2 < 0 || c2 >= w {
                        continue;
                    }
                    let i = q[(r * w + c) as usize];
                    let j = q[(r2 * w + c2) as usize];
                    counts[i * levels + j] += 1;
                    counts[j * levels + i] += 1;
                    total += 2;
                }
            }
            for (a, &n) in acc.iter_mut().zip(&counts) {
                *a += n as f64 / total as f64;
            }
            n_offsets += 1;
        }
    }
    for a in acc.iter_mut() {
        *a /= n_offsets as f64;
    }
    Ok(Glcm { levels, p: acc })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureFeatures {
    pub contrast: f64,
    pub dissimilarity: f64,
    pub homogeneity: f64,
    pub asm: f64,
    pub energy: f64,
    pub correlation: f64,
}

impl TextureFeatures {
    pub const NAMES: [&'static str; 6] = [
        "contrast",
        "dissimilarity",
        "homogeneity",
        "asm",
        "energy",
        "correlation",
    ];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.contrast,
            self.dissimilarity,
            self.homogeneity,
            self.asm,
            self.energy,
            self.correlation,
        ]
    }
}

pub fn texture_from_glcm(g: &Glcm) -> TextureFeatures {
    let n = g.levels;
    let (mut contrast, mut dissimilarity, mut homogeneity, mut asm) = (0.0, 0.0, 0.0, 0.0);
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = g.at(i, j);
            let d = i as f64 - j as f64;
            contrast += p * d * d;
            dissimilarity += p * d.abs();
            homogeneity += p / (1.0 + d * d);
            asm += p * p;
            mu_i += p * i as f64;
            mu_j += p * j as f64;
        }
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = g.at(i, j);
            let di = i as f64 - mu_i;
            let dj = j as f64 - mu_j;
            var_i += p * di * di;
            var_j += p * dj * dj;
            cov += p * di * dj;
        }
    }
    let denom = (var_i * var_j).sqrt();
    let correlation = if denom < 1e-15 { 1.0 } else { cov / denom };
    TextureFeatures {
        contrast,
        dissimilarity,
        homogeneity,
        asm,
        energy: asm.sqrt(),
        correlation,
    }
}

pub fn texture_features_with(image: &GrayImage, params: &GlcmParams) -> Result<TextureFeatures> {
    Ok(texture_from_glcm(&glcm(image, params)?))
}

/// Texture statistics with the default co-occurrence settings.
pub fn texture_features(image: &GrayImage) -> Result<TextureFeatures> {
    texture_features_with(image, &GlcmParams::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn checkerboard() -> GrayImage {
        GrayImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn horizontal(levels: usize) -> GlcmParams {
        GlcmParams {
            levels,
            distances: vec![1],
            angles_deg: vec![0.0],
        }
    }

    #[test]
    fn constant_image_concentrates_at_origin() {
        let img = GrayImage::new(4, 4, vec![3.0; 16]).unwrap();
        let g = glcm(&img, &GlcmParams::default()).unwrap();
        assert_eq!(g.at(0, 0), 1.0);
        assert_eq!(g.p.iter().sum::<f64>(), 1.0);
        let t = texture_from_glcm(&g);
        assert_eq!(t.to_array(), [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn checkerboard_counts_and_features() {
        let g = glcm(&checkerboard(), &horizontal(2)).unwrap();
        assert_eq!(g.p, vec![0.0, 0.5, 0.5, 0.0]);
        let t = texture_from_glcm(&g);
        assert_eq!(t.contrast, 1.0);
        assert_eq!(t.dissimilarity, 1.0);
        assert_eq!(t.homogeneity, 0.5);
        assert_eq!(t.asm, 0.5);
        assert!((t.energy - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((t.correlation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn offsets_follow_angle_convention() {
        assert_eq!(offset(1, 0.0), (0, 1));
        assert_eq!(offset(1, 90.0), (1, 0));
        assert_eq!(offset(2, 45.0), (1, 1));
    }

    #[test]
    fn random_image_matches_pair_enumeration() {
        let mut rng = stream(9, &[]);
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
        let img = GrayImage::new(8, 8, values).unwrap();
        let params = GlcmParams {
            levels: 5,
            distances: vec![1, 2],
            angles_deg: vec![0.0, 90.0],
        };
        let g = glcm(&img, &params).unwrap();

        // Enumerate every ordered pixel pair and keep those at a requested displacement.
        let q = quantize(&img, 5);
        let mut expected = vec![0.0; 25];
        let mut n_off = 0.0;
        for &d in &params.distances {
            for &a in &params.angles_deg {
                let (dr, dc) = offset(d, a);
                let mut counts = vec![0.0; 25];
                let mut total = 0.0;
                for p1 in 0..64usize {
                    for p2 in 0..64usize {
                        let (r1, c1) = ((p1 / 8) as isize, (p1 % 8) as isize);
                        let (r2, c2) = ((p2 / 8) as isize, (p2 % 8) as isize);
                        let delta = (r2 - r1, c2 - c1);
                        if delta == (dr, dc) || delta == (-dr, -dc) {
                            counts[q[p1] * 5 + q[p2]] += 1.0;
                            total += 1.0;
                        }
                    }
                }
                for (e, c) in expected.iter_mut().zip(&counts) {
                    *e += c / total;
                }
                n_off += 1.0;
            }
        }
        for (a, e) in g.p.iter().zip(&expected) {
            assert!((a - e / n_off).abs() < 1e-12);
        }
        assert!((g.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_levels_rejected() {
        assert!(glcm(&checkerboard(), &horizontal(1)).is_err());
    }
}
