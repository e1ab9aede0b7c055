//! Eleven shape descriptors of a segmented seed.

use crate::error::{Error, Result};
use crate::features::ellipse::{fit_ellipse, Ellipse};
use crate::features::mask::Mask;

/// Guard for the mean/std radius ratio on near-perfect circles.
const RADIUS_STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphFeatures {
    pub area: f64,
    pub perimeter: f64,
    pub perimeter_area_ratio: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub eccentricity: f64,
    pub radius_std: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub radius_max_min_ratio: f64,
    pub haralick_ratio: f64,
}

impl MorphFeatures {
    pub const NAMES: [&'static str; 11] = [
        "area",
        "perimeter",
        "perimeter_area_ratio",
        "major_axis",
        "minor_axis",
        "eccentricity",
        "radius_std",
        "radius_min",
        "radius_max",
        "radius_max_min_ratio",
        "haralick_ratio",
    ];

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.area,
            self.perimeter,
            self.perimeter_area_ratio,
            self.major_axis,
            self.minor_axis,
            self.eccentricity,
            self.radius_std,
            self.radius_min,
            self.radius_max,
            self.radius_max_min_ratio,
            self.haralick_ratio,
        ]
    }
}

/// Number of foreground/background pixel-edge pairs; the image border counts as background.
pub fn perimeter(mask: &Mask) -> usize {
    let mut edges = 0;
    for r in 0..mask.height() as isize {
        for c in 0..mask.width() as isize {
            if !mask.get_signed(r, c) {
                continue;
            }
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if !mask.get_signed(r + dr, c + dc) {
                    edges += 1;
                }
            }
        }
    }
    edges
}

/// Foreground pixels with a background 4-neighbour or touching the image border, as `(row, col)`.
pub fn contour_points(mask: &Mask) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for r in 0..mask.height() as isize {
        for c in 0..mask.width() as isize {
            if mask.get_signed(r, c)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|&(dr, dc)| !mask.get_signed(r + dr, c + dc))
            {
                out.push((r as f64, c as f64));
            }
        }
    }
    out
}

/// Midpoints of foreground/background pixel edges: points on the rasterised outline itself.
pub fn crack_points(mask: &Mask) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for r in 0..mask.height() as isize {
        for c in 0..mask.width() as isize {
            if !mask.get_signed(r, c) {
                continue;
            }
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if !mask.get_signed(r + dr, c + dc) {
                    out.push((r as f64 + 0.5 * dr as f64, c as f64 + 0.5 * dc as f64));
                }
            }
        }
    }
    out
}

pub fn morphological_features(mask: &Mask) -> Result<MorphFeatures> {
    let area = mask.count();
    if area == 0 {
        return Err(Error::Segmentation("empty mask".into()));
    }
    let perimeter = perimeter(mask) as f64;
    let contour = contour_points(mask);
    let ellipse: Ellipse = fit_ellipse(&contour)?;
    let radii: Vec<f64> = contour
        .iter()
        .map(|&(r, c)| ((r - ellipse.center.0).powi(2) + (c - ellipse.center.1).powi(2)).sqrt())
        .collect();
    let n = radii.len() as f64;
    let mean = radii.iter().sum::<f64>() / n;
    let std = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let max = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min <= 0.0 {
        return Err(Error::EllipseFit("fitted centre lies on the contour".into()));
    }
    let area = area as f64;
    Ok(MorphFeatures {
        area,
        perimeter,
        perimeter_area_ratio: perimeter / area,
        major_axis: 2.0 * ellipse.semi_major,
        minor_axis: 2.0 * ellipse.semi_minor,
        eccentricity: ellipse.eccentricity(),
        radius_std: std,
        radius_min: min,
        radius_max: max,
        radius_max_min_ratio: max / min,
        haralick_ratio: mean / std.max(RADIUS_STD_FLOOR),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ellipse::fit_ellipse;

    pub(crate) fn raster_ellipse(h: usize, w: usize, center: (f64, f64), a: f64, b: f64) -> Mask {
        Mask::from_fn(h, w, |r, c| {
            let x = (c as f64 - center.1) / a;
            let y = (r as f64 - center.0) / b;
            x * x + y * y <= 1.0
        })
    }

    #[test]
    fn rectangle_area_and_perimeter() {
        let m = Mask::from_fn(30, 40, |r, c| (5..15).contains(&r) && (10..30).contains(&c));
        assert_eq!(m.count(), 200);
        assert_eq!(perimeter(&m), 60);
        let f = morphological_features(&m).unwrap();
        assert_eq!(f.area, 200.0);
        assert_eq!(f.perimeter, 60.0);
        assert!((f.perimeter_area_ratio - 0.3).abs() < 1e-15);
    }

    #[test]
    fn border_counts_as_background() {
        let m = Mask::from_fn(3, 3, |_, _| true);
        assert_eq!(perimeter(&m), 12);
        assert_eq!(contour_points(&m).len(), 8);
    }

    #[test]
    fn ellipse_eccentricity_close_to_analytic() {
        let m = raster_ellipse(60, 100, (30.0, 50.0), 30.0, 15.0);
        let f = morphological_features(&m).unwrap();
        assert!((f.eccentricity - 3f64.sqrt() / 2.0).abs() <= 0.02, "{}", f.eccentricity);
        assert!(f.eccentricity < 1.0 && f.perimeter_area_ratio > 0.0 && f.radius_min > 0.0);
    }

    #[test]
    fn outline_points_recover_axes_within_two_percent() {
        let m = raster_ellipse(60, 100, (30.0, 50.0), 30.0, 15.0);
        let e = fit_ellipse(&crack_points(&m)).unwrap();
        assert!((e.semi_major / 30.0 - 1.0).abs() <= 0.02, "a = {}", e.semi_major);
        assert!((e.semi_minor / 15.0 - 1.0).abs() <= 0.02, "b = {}", e.semi_minor);
        assert!(e.orientation.abs() <= 0.05);
    }

    #[test]
    fn circle_radii_are_tight() {
        let m = raster_ellipse(40, 40, (20.0, 20.0), 10.0, 10.0);
        let e = fit_ellipse(&crack_points(&m)).unwrap();
        assert!((e.semi_major / e.semi_minor - 1.0).abs() <= 0.02);
        assert!(e.eccentricity() < 0.05, "{}", e.eccentricity());

        let f = morphological_features(&m).unwrap();
        // Independent recomputation from the contour pixels and the fitted centre.
        let fit = fit_ellipse(&contour_points(&m)).unwrap();
        let radii: Vec<f64> = contour_points(&m)
            .iter()
            .map(|p| ((p.0 - fit.center.0).powi(2) + (p.1 - fit.center.1).powi(2)).sqrt())
            .collect();
        let lo = radii.iter().cloned().fold(f64::MAX, f64::min);
        let hi = radii.iter().cloned().fold(0.0, f64::max);
        assert_eq!(f.radius_max_min_ratio, hi / lo);
        assert!(f.radius_max_min_ratio <= 1.15, "{}", f.radius_max_min_ratio);
        assert!(f.haralick_ratio >= 20.0, "{}", f.haralick_ratio);
    }

    #[test]
    fn empty_mask_rejected() {
        let m = Mask::from_fn(10, 10, |_, _| false);
        assert!(morphological_features(&m).is_err());
    }
}
