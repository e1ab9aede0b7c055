//! Seed segmentation: Gaussian blur, adaptive threshold, opening/closing and
//! largest-component selection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdc::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_signed(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.values[row as usize * self.width + col as usize]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn fill_fraction(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    /// Intersection over union with another mask of the same size.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.values.iter().zip(&other.values).filter(|(a, b)| **a && **b).count();
        let union = self.values.iter().zip(&other.values).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskParams {
    pub blur_sigma: f64,
    /// Side of the square local-mean window, in pixels.
    pub threshold_window: usize,
    /// Threshold offset as a fraction of the blurred image's range.
    pub threshold_offset_frac: f64,
    /// Side of the square structuring element.
    pub struct_size: usize,
    pub min_fill: f64,
    pub max_fill: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            threshold_window: 35,
            threshold_offset_frac: 0.01,
            struct_size: 3,
            min_fill: 0.005,
            max_fill: 0.80,
        }
    }
}

/// Mirror index with edge duplication (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur, radius ⌈3σ⌉, reflective border.
pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (h, w) = (image.height(), image.width());
    let src = image.values();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[r * w + reflect(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    GrayImage::new(h, w, out).expect("blur preserves shape and finiteness")
}

/// Mean over a `window × window` neighbourhood clipped at the image border.
pub fn local_mean(image: &GrayImage, window: usize) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let v = image.values();
    // Summed-area table with a zero first row/column.
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += v[r * w + c];
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + row_sum;
        }
    }
    let half = window / 2;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
            let sum = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0]
                + sat[r0 * (w + 1) + c0];
            out[r * w + c] = sum / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

/// Pixel is foreground iff its value exceeds the local mean plus `offset_frac × range`.
pub fn adaptive_threshold(image: &GrayImage, window: usize, offset_frac: f64) -> Mask {
    let (lo, hi) = image.min_max();
    let (h, w) = (image.height(), image.width());
    if hi - lo <= 0.0 {
        return Mask::from_fn(h, w, |_, _| true);
    }
    let offset = offset_frac * (hi - lo);
    let means = local_mean(image, window);
    let values = image
        .values()
        .iter()
        .zip(&means)
        .map(|(&v, &m)| v > m + offset)
        .collect();
    Mask { height: h, width: w, values }
}

/// Min (`erode`) or max (`dilate`) over a square window; pixels outside the image are ignored.
fn rank_filter(mask: &Mask, size: usize, erode: bool) -> Mask {
    let (h, w) = (mask.height as isize, mask.width as isize);
    let lo = -((size as isize - 1) / 2);
    let hi = size as isize / 2;
    let mut out = vec![false; mask.values.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = erode;
            'win: for dr in lo..=hi {
                for dc in lo..=hi {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h || cc >= w {
                        continue;
                    }
                    let v = mask.values[(rr * w + cc) as usize];
                    if erode && !v {
                        acc = false;
                        break 'win;
                    }
                    if !erode && v {
                        acc = true;
                        break 'win;
                    }
                }
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    Mask {
        height: mask.height,
        width: mask.width,
        values: out,
    }
}

pub fn erode(mask: &Mask, size: usize) -> Mask {
    rank_filter(mask, size, true)
}

pub fn dilate(mask: &Mask, size: usize) -> Mask {
    rank_filter(mask, size, false)
}

pub fn opening(mask: &Mask, size: usize) -> Mask {
    dilate(&erode(mask, size), size)
}

pub fn closing(mask: &Mask, size: usize) -> Mask {
    erode(&dilate(mask, size), size)
}

/// Keeps the largest 4-connected foreground component (first in raster order on ties).
pub fn largest_component(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut label = vec![0usize; h * w];
    let mut best = (0usize, 0usize);
    let mut next = 1;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.values[start] || label[start] != 0 {
            continue;
        }
        let mut size = 0;
        label[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask.values[q] && label[q] == 0 {
                    label[q] = next;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
        next += 1;
    }
    Mask {
        height: h,
        width: w,
        values: label.iter().map(|&l| l != 0 && l == best.0).collect(),
    }
}

pub fn compute_mask(ss: &GrayImage, params: &MaskParams) -> Result<Mask> {
    if ss.height() < 8 || ss.width() < 8 {
        return Err(Error::InvalidArgument(format!(
            "segmentation needs at least 8x8 pixels, got {}x{}",
            ss.height(),
            ss.width()
        )));
    }
    let blurred = gaussian_blur(ss, params.blur_sigma);
    let initial = adaptive_threshold(&blurred, params.threshold_window, params.threshold_offset_frac);
    let cleaned = closing(&opening(&initial, params.struct_size), params.struct_size);
    let mask = largest_component(&cleaned);
    let fill = mask.fill_fraction();
    if fill < params.min_fill || fill > params.max_fill {
        return Err(Error::Segmentation(format!(
            "mask fill fraction {fill:.4} outside [{}, {}]",
            params.min_fill, params.max_fill
        )));
    }
    Ok(mask)
}
