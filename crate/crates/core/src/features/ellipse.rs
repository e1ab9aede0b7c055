//! Direct least-squares ellipse fitting (Fitzgibbon, Pilu & Fisher).
//!
//! Points are `(row, col)` pixel coordinates; internally `x = col`, `y = row`.
//! The conic `A x² + B xy + C y² + D x + E y + F = 0` minimising the algebraic
//! error subject to `4AC − B² = 1` is found from a reduced 3 × 3 generalised
//! eigenproblem; inputs are centred and scaled first for conditioning.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    /// `(row, col)`.
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis from the column axis towards the row axis, in `[−π/2, π/2)`.
    pub orientation: f64,
}

impl Ellipse {
    pub fn eccentricity(&self) -> f64 {
        let q = self.semi_minor / self.semi_major;
        (1.0 - q * q).max(0.0).sqrt()
    }
}

/// Conic coefficients `[A, B, C, D, E, F]`.
pub type Conic = [f64; 6];

pub fn fit_conic(points: &[(f64, f64)]) -> Result<Conic> {
    let n = points.len();
    if n < 6 {
        return Err(Error::EllipseFit(format!("need at least 6 points, got {n}")));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let spread = points
        .iter()
        .map(|p| ((p.1 - mx).powi(2) + (p.0 - my).powi(2)).sqrt())
        .sum::<f64>()
        / nf;
    if spread < 1e-12 {
        return Err(Error::EllipseFit("points are coincident".into()));
    }
    let s = std::f64::consts::SQRT_2 / spread;

    let mut d = DMatrix::<f64>::zeros(n, 6);
    for (i, &(row, col)) in points.iter().enumerate() {
        let x = (col - mx) * s;
        let y = (row - my) * s;
        d[(i, 0)] = x * x;
        d[(i, 1)] = x * y;
        d[(i, 2)] = y * y;
        d[(i, 3)] = x;
        d[(i, 4)] = y;
        d[(i, 5)] = 1.0;
    }
    let scatter = d.transpose() * &d;
    let s1: Matrix3<f64> = scatter.fixed_view::<3, 3>(0, 0).into_owned();
    let s2: Matrix3<f64> = scatter.fixed_view::<3, 3>(0, 3).into_owned();
    let s3: Matrix3<f64> = scatter.fixed_view::<3, 3>(3, 3).into_owned();
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::EllipseFit("degenerate point configuration (collinear?)".into()))?;
    // Linear part expressed through the quadratic part: a2 = T a1.
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // C1⁻¹ for C1 = [[0,0,2],[0,-1,0],[2,0,0]].
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let system = c1_inv * m;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in system.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let shifted = system - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &sv)| if sv < acc.1 { (i, sv) } else { acc });
        let a1 = v_t.row(k).transpose();
        let constraint = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if constraint <= 0.0 {
            continue;
        }
        let a2 = t * a1;
        let full = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
        let residual = algebraic_error(&scatter, &full) / constraint;
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, a1));
        }
    }
    let (_, a1) = best.ok_or_else(|| Error::EllipseFit("no elliptical solution".into()))?;
    let a2 = t * a1;

    // Undo x' = s(x − mx), y' = s(y − my).
    let (a, b, c, dd, e, f) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);
    let s2_ = s * s;
    Ok([
        a * s2_,
        b * s2_,
        c * s2_,
        -2.0 * a * s2_ * mx - b * s2_ * my + dd * s,
        -b * s2_ * mx - 2.0 * c * s2_ * my + e * s,
        a * s2_ * mx * mx + b * s2_ * mx * my + c * s2_ * my * my - dd * s * mx - e * s * my + f,
    ])
}

fn algebraic_error(scatter: &DMatrix<f64>, coeffs: &[f64; 6]) -> f64 {
    let mut acc = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            acc += coeffs[i] * scatter[(i, j)] * coeffs[j];
        }
    }
    acc
}

/// Geometric parameters of an elliptical conic.
pub fn conic_to_ellipse(conic: &Conic) -> Result<Ellipse> {
    let [a, b, c, d, e, f] = *conic;
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        return Err(Error::EllipseFit("conic is not an ellipse".into()));
    }
    let x0 = (2.0 * c * d - b * e) / disc;
    let y0 = (2.0 * a * e - b * d) / disc;
    let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;

    // Eigen-decomposition of [[a, b/2], [b/2, c]].
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let root = (half_diff * half_diff + 0.25 * b * b).sqrt();
    let (l_small, l_large) = if mean >= 0.0 {
        (mean - root, mean + root)
    } else {
        (mean + root, mean - root)
    };
    let major_sq = -f0 / l_small;
    let minor_sq = -f0 / l_large;
    if !(major_sq > 0.0 && minor_sq > 0.0) || !major_sq.is_finite() {
        return Err(Error::EllipseFit("imaginary ellipse".into()));
    }
    // Major axis minimises the (sign-normalised) quadratic form over directions.
    let sign = if a + c < 0.0 { -1.0 } else { 1.0 };
    let theta = wrap_half_pi(0.5 * (-sign * b).atan2(sign * (c - a)));
    Ok(Ellipse {
        center: (y0, x0),
        semi_major: major_sq.sqrt(),
        semi_minor: minor_sq.sqrt(),
        orientation: theta,
    })
}

/// Maps an axis direction into `[−π/2, π/2)`.
fn wrap_half_pi(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = theta.rem_euclid(PI);
    if t >= PI / 2.0 {
        t -= PI;
    }
    t
}

pub fn fit_ellipse(points: &[(f64, f64)]) -> Result<Ellipse> {
    conic_to_ellipse(&fit_conic(points)?)
}
