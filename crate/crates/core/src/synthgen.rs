//! Synthetic seed datacubes.
//!
//! Every cube holds one elliptical, slightly rough-edged object over a dark
//! background. Object pixels carry a class-specific spectral signature,
//! modulated by per-pixel speckle and an optional per-cube gain, plus Gaussian
//! noise. Generation is a pure function of `(spec, seed)`: each cube draws from
//! its own stream keyed by `(seed, class index, cube index)`.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdc::{save_datacube, Datacube, Manifest, ManifestEntry};
use crate::rng::{stream, StreamRng};

/// Number of knots in the periodic radial roughness profile.
const ROUGHNESS_KNOTS: usize = 12;
/// Maximum centre jitter as a fraction of each spatial dimension.
const CENTER_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub baseline: f64,
    pub bumps: Vec<Bump>,
}

impl Signature {
    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        self.baseline
            + self
                .bumps
                .iter()
                .map(|b| {
                    let z = (wavelength_nm - b.center_nm) / b.width_nm;
                    b.amplitude * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
    }

    pub fn sample(&self, wavelengths: &[f64]) -> Vec<f64> {
        wavelengths.iter().map(|&l| self.eval(l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub semi_major_px: (f64, f64),
    pub semi_minor_px: (f64, f64),
    pub boundary_roughness: f64,
    pub texture_amp: f64,
    pub signature: Signature,
}

impl ClassSpec {
    pub fn validate(&self, wavelengths: &[f64]) -> Result<()> {
        let (a0, a1) = self.semi_major_px;
        let (b0, b1) = self.semi_minor_px;
        if !(a0 > 0.0 && a0 <= a1 && b0 > 0.0 && b0 <= b1) {
            return Err(Error::InvalidArgument(format!(
                "class {}: axis ranges must be positive and non-empty",
                self.name
            )));
        }
        if b1 > a1 {
            return Err(Error::InvalidArgument(format!(
                "class {}: semi-minor range exceeds semi-major range",
                self.name
            )));
        }
        if self.boundary_roughness < 0.0 || self.texture_amp < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "class {}: roughness and texture amplitude must be non-negative",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.signature.baseline) {
            return Err(Error::InvalidArgument(format!(
                "class {}: signature baseline must lie in [0, 1]",
                self.name
            )));
        }
        if let Some(v) = self
            .signature
            .sample(wavelengths)
            .into_iter()
            .find(|v| !(0.0..=1.5).contains(v))
        {
            return Err(Error::InvalidArgument(format!(
                "class {}: signature value {v} outside [0, 1.5]",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub classes: Vec<ClassSpec>,
    pub cubes_per_class: usize,
    pub cube_dims: (usize, usize, usize),
    pub wavelength_start_nm: f64,
    pub wavelength_step_nm: f64,
    pub background_level: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub allow_rotation: bool,
    /// Half-width of the uniform per-cube illumination gain applied to the object.
    #[serde(default)]
    pub gain_jitter: f64,
}

impl DatasetSpec {
    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.cube_dims.2)
            .map(|b| self.wavelength_start_nm + b as f64 * self.wavelength_step_nm)
            .collect()
    }

    pub fn render_params(&self) -> RenderParams {
        RenderParams {
            dims: self.cube_dims,
            wavelength_start_nm: self.wavelength_start_nm,
            wavelength_step_nm: self.wavelength_step_nm,
            background_level: self.background_level,
            noise_std: self.noise_std,
            allow_rotation: self.allow_rotation,
            gain_jitter: self.gain_jitter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if self.cubes_per_class < 1 {
            return Err(Error::InvalidArgument("cubes_per_class must be at least 1".into()));
        }
        let (h, w, b) = self.cube_dims;
        if h < 8 || w < 8 || b < 4 {
            return Err(Error::InvalidArgument(format!(
                "cube dims must be at least (8, 8, 4), got ({h}, {w}, {b})"
            )));
        }
        if !(self.wavelength_step_nm > 0.0) {
            return Err(Error::InvalidArgument("wavelength step must be positive".into()));
        }
        if self.noise_std < 0.0 || self.background_level < 0.0 {
            return Err(Error::InvalidArgument("noise and background must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.gain_jitter) {
            return Err(Error::InvalidArgument("gain_jitter must lie in [0, 1)".into()));
        }
        let wl = self.wavelengths();
        for class in &self.classes {
            class.validate(&wl)?;
            check_fits(class, self.cube_dims, self.allow_rotation)?;
        }
        Ok(())
    }
}

/// Geometry and acquisition settings shared by every rendered cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub dims: (usize, usize, usize),
    pub wavelength_start_nm: f64,
    pub wavelength_step_nm: f64,
    pub background_level: f64,
    pub noise_std: f64,
    pub allow_rotation: bool,
    pub gain_jitter: f64,
}

/// A rendered cube with the object region used to draw it.
#[derive(Debug, Clone)]
pub struct RenderedSeed {
    pub cube: Datacube,
    /// Row-major `H × W` object membership.
    pub interior: Vec<bool>,
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    pub orientation: f64,
}

/// Largest half-extent the object may take along each axis.
fn axis_limits(dims: (usize, usize, usize)) -> (f64, f64) {
    let (h, w, _) = dims;
    let lim = |n: usize| n as f64 * (0.5 - CENTER_JITTER) - 0.5;
    (lim(h), lim(w))
}

fn check_fits(class: &ClassSpec, dims: (usize, usize, usize), rotation: bool) -> Result<()> {
    let (row_lim, col_lim) = axis_limits(dims);
    let grow = 1.0 + class.boundary_roughness;
    let major = class.semi_major_px.1 * grow;
    let minor = class.semi_minor_px.1 * grow;
    let (major_lim, minor_lim) = if rotation {
        (row_lim.min(col_lim), row_lim.min(col_lim))
    } else {
        (col_lim, row_lim)
    };
    if major > major_lim || minor > minor_lim {
        return Err(Error::Geometry(format!(
            "class {}: ellipse with semi-axes up to ({major:.2}, {minor:.2}) px does not fit \
             a {}x{} grid with centre jitter (limits {major_lim:.2}, {minor_lim:.2})",
            class.name, dims.0, dims.1
        )));
    }
    Ok(())
}

/// Periodic profile through random knots, interpolated with a cubic
/// Catmull-Rom spline so the rim has no kinks.
struct RadialProfile {
    knots: [f64; ROUGHNESS_KNOTS],
}

impl RadialProfile {
    fn sample(rng: &mut StreamRng) -> Self {
        let mut knots = [0.0; ROUGHNESS_KNOTS];
        for k in knots.iter_mut() {
            *k = rng.random_range(-1.0..=1.0);
        }
        Self { knots }
    }

    fn at(&self, angle: f64) -> f64 {
        let n = ROUGHNESS_KNOTS as f64;
        let pos = angle.rem_euclid(2.0 * PI) / (2.0 * PI) * n;
        let i = pos.floor() as isize;
        let t = pos - i as f64;
        let k = |j: isize| self.knots[j.rem_euclid(ROUGHNESS_KNOTS as isize) as usize];
        let (p0, p1, p2, p3) = (k(i - 1), k(i), k(i + 1), k(i + 2));
        0.5 * (2.0 * p1
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }
}

/// Renders one seed cube. See [`render_seed_with_truth`].
pub fn render_seed(class: &ClassSpec, params: &RenderParams, rng: &mut StreamRng) -> Result<Datacube> {
    render_seed_with_truth(class, params, rng).map(|r| r.cube)
}

pub fn render_seed_with_truth(
    class: &ClassSpec,
    params: &RenderParams,
    rng: &mut StreamRng,
) -> Result<RenderedSeed> {
    let (h, w, bands) = params.dims;
    if h < 8 || w < 8 || bands < 1 {
        return Err(Error::InvalidArgument(format!("cube dims {h}x{w}x{bands} too small")));
    }
    check_fits(class, params.dims, params.allow_rotation)?;
    let wavelengths: Vec<f64> = (0..bands)
        .map(|b| params.wavelength_start_nm + b as f64 * params.wavelength_step_nm)
        .collect();
    class.validate(&wavelengths)?;
    let signature = class.signature.sample(&wavelengths);

    let a = uniform(rng, class.semi_major_px);
    let b = uniform(rng, class.semi_minor_px).min(a);
    let center = (
        (h as f64 - 1.0) / 2.0 + rng.random_range(-1.0..=1.0) * CENTER_JITTER * h as f64,
        (w as f64 - 1.0) / 2.0 + rng.random_range(-1.0..=1.0) * CENTER_JITTER * w as f64,
    );
    let orientation = if params.allow_rotation {
        rng.random_range(-PI / 2.0..PI / 2.0)
    } else {
        0.0
    };
    let profile = RadialProfile::sample(rng);
    let gain = if params.gain_jitter > 0.0 {
        1.0 + rng.random_range(-params.gain_jitter..=params.gain_jitter)
    } else {
        1.0
    };
    let noise = (params.noise_std > 0.0)
        .then(|| Normal::new(0.0, params.noise_std).expect("noise std is finite and positive"));

    let (sin, cos) = orientation.sin_cos();
    let mut interior = vec![false; h * w];
    let mut values = Vec::with_capacity(h * w * bands);
    for r in 0..h {
        for c in 0..w {
            // Column axis is x, row axis is y; orientation rotates the major axis from x.
            let dx = c as f64 - center.1;
            let dy = r as f64 - center.0;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let (nu, nv) = (u / a, v / b);
            let rho = (nu * nu + nv * nv).sqrt();
            let limit = 1.0 + class.boundary_roughness * profile.at(nv.atan2(nu));
            let inside = rho <= limit;
            interior[r * w + c] = inside;

            let speckle = if inside && class.texture_amp > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                (1.0 + class.texture_amp * z).max(0.0)
            } else {
                1.0
            };
            for &s in &signature {
                let clean = if inside {
                    s * gain * speckle
                } else {
                    params.background_level
                };
                let noisy = match &noise {
                    Some(n) => clean + n.sample(rng),
                    None => clean,
                };
                // Stored at f32 precision so cubes survive a file round trip unchanged.
                values.push(noisy.max(0.0) as f32 as f64);
            }
        }
    }
    let cube = Datacube::new(
        h,
        w,
        bands,
        params.wavelength_start_nm,
        params.wavelength_step_nm,
        values,
    )?;
    Ok(RenderedSeed {
        cube,
        interior,
        center,
        semi_major: a,
        semi_minor: b,
        orientation,
    })
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// One generated sample, kept in memory.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub label: usize,
    pub index: usize,
    pub seed: RenderedSeed,
}

/// Renders the whole dataset in memory, class-major order.
pub fn generate_samples(spec: &DatasetSpec, seed: u64) -> Result<Vec<GeneratedSample>> {
    spec.validate()?;
    let params = spec.render_params();
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.cubes_per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(label, index)| {
            let mut rng = stream(seed, &[label as u64, index as u64]);
            let rendered = render_seed_with_truth(&spec.classes[label], &params, &mut rng)?;
            Ok(GeneratedSample {
                label,
                index,
                seed: rendered,
            })
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Writes one HSDC file per cube plus `manifest.tsv` into `out_dir`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let samples = generate_samples(spec, seed)?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest::default();
    for s in &samples {
        let file = format!("c{}_{:05}.hsdc", s.label, s.index);
        save_datacube(&s.seed.cube, out_dir.join(&file))?;
        manifest.entries.push(ManifestEntry {
            cube_path: file,
            label: s.label,
            class_name: spec.classes[s.label].name.clone(),
        });
    }
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    SpectralOnly,
    SpatialOnly,
    Mixed4Class,
    Easy6Class,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::SpectralOnly,
        BenchmarkKind::SpatialOnly,
        BenchmarkKind::Mixed4Class,
        BenchmarkKind::Easy6Class,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::SpectralOnly => "spectral-only",
            BenchmarkKind::SpatialOnly => "spatial-only",
            BenchmarkKind::Mixed4Class => "mixed-4class",
            BenchmarkKind::Easy6Class => "easy-6class",
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown benchmark kind {s:?} (expected spectral-only, spatial-only, mixed-4class or easy-6class)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CubeSize {
    /// 16 × 48 × 24.
    #[default]
    Desk,
    /// 50 × 170 × 110, 950–1550 nm.
    PaperSize,
}

impl CubeSize {
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            CubeSize::Desk => (16, 48, 24),
            CubeSize::PaperSize => (50, 170, 110),
        }
    }
}

const WAVELENGTH_START_NM: f64 = 950.0;
const WAVELENGTH_END_NM: f64 = 1550.0;

/// Shape with semi-axes given as fractions of the column (major) and row
/// (minor) extents, so one description serves every cube size.
struct Shape {
    major_frac: f64,
    minor_frac: f64,
}

impl Shape {
    /// Equal-area family with `ratio` = major/minor. Axes are sized on the
    /// 16 × 48 desk grid (product of semi-axes 50 px²) and scaled from there.
    fn with_ratio(ratio: f64) -> Self {
        let area = 50.0;
        let major = (area * ratio).sqrt();
        let minor = major / ratio;
        Self {
            major_frac: major / 48.0,
            minor_frac: minor / 16.0,
        }
    }

    fn ranges(&self, dims: (usize, usize, usize), spread: f64) -> ((f64, f64), (f64, f64)) {
        let a = self.major_frac * dims.1 as f64;
        let b = self.minor_frac * dims.0 as f64;
        (
            (a * (1.0 - spread), a * (1.0 + spread)),
            (b * (1.0 - spread), b * (1.0 + spread)),
        )
    }
}

fn bump_signature(baseline: f64, bumps: &[(f64, f64)]) -> Signature {
    Signature {
        baseline,
        bumps: bumps
            .iter()
            .map(|&(center_nm, amplitude)| Bump {
                center_nm,
                width_nm: 45.0,
                amplitude,
            })
            .collect(),
    }
}

fn class(name: &str, shape: &Shape, signature: Signature, dims: (usize, usize, usize)) -> ClassSpec {
    let (semi_major_px, semi_minor_px) = shape.ranges(dims, 0.06);
    ClassSpec {
        name: name.to_string(),
        semi_major_px,
        semi_minor_px,
        boundary_roughness: 0.04,
        texture_amp: 0.08,
        signature,
    }
}

/// Canonical benchmark datasets.
///
/// - `spectral-only`: one shape distribution, four equal-energy signatures.
/// - `spatial-only`: one signature, four equal-area shapes with distinct axis ratios.
/// - `mixed-4class`: two shapes × two signatures, so every pair of classes
///   shares one cue and only the combination identifies a class.
/// - `easy-6class`: six classes, each with its own shape and signature.
pub fn benchmark_spec(kind: BenchmarkKind, size: CubeSize) -> DatasetSpec {
    let dims = size.dims();
    let step = (WAVELENGTH_END_NM - WAVELENGTH_START_NM) / (dims.2 as f64 - 1.0);
    let generic = Shape {
        major_frac: 14.0 / 48.0,
        minor_frac: 4.7 / 16.0,
    };
    let classes = match kind {
        BenchmarkKind::SpectralOnly => [1100.0, 1220.0, 1340.0, 1460.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                class(
                    &format!("spec{i}"),
                    &generic,
                    bump_signature(0.35, &[(c, 0.35)]),
                    dims,
                )
            })
            .collect(),
        BenchmarkKind::SpatialOnly => [1.8, 2.6, 3.6, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &ratio)| {
                class(
                    &format!("shape{i}"),
                    &Shape::with_ratio(ratio),
                    bump_signature(0.35, &[(1250.0, 0.3)]),
                    dims,
                )
            })
            .collect(),
        BenchmarkKind::Mixed4Class => {
            let shapes = [Shape::with_ratio(2.0), Shape::with_ratio(3.4)];
            let sigs = [
                bump_signature(0.35, &[(1180.0, 0.3)]),
                bump_signature(0.35, &[(1320.0, 0.3)]),
            ];
            let mut out = Vec::new();
            for (si, shape) in shapes.iter().enumerate() {
                for (gi, sig) in sigs.iter().enumerate() {
                    out.push(class(&format!("s{si}g{gi}"), shape, sig.clone(), dims));
                }
            }
            out
        }
        BenchmarkKind::Easy6Class => [
            (1.8, 1050.0),
            (2.3, 1150.0),
            (2.9, 1250.0),
            (3.5, 1350.0),
            (4.2, 1450.0),
            (5.0, 1520.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(ratio, c))| {
            class(
                &format!("var{i}"),
                &Shape::with_ratio(ratio),
                bump_signature(0.35, &[(c, 0.35)]),
                dims,
            )
        })
        .collect(),
    };
    DatasetSpec {
        classes,
        cubes_per_class: 60,
        cube_dims: dims,
        wavelength_start_nm: WAVELENGTH_START_NM,
        wavelength_step_nm: step,
        background_level: 0.02,
        noise_std: 0.02,
        allow_rotation: false,
        gain_jitter: 0.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_class() -> ClassSpec {
        ClassSpec {
            name: "plain".into(),
            semi_major_px: (14.0, 16.0),
            semi_minor_px: (4.0, 5.0),
            boundary_roughness: 0.0,
            texture_amp: 0.0,
            signature: bump_signature(0.4, &[(1200.0, 0.3)]),
        }
    }

    fn desk_params(noise_std: f64) -> RenderParams {
        RenderParams {
            dims: (16, 48, 24),
            wavelength_start_nm: 950.0,
            wavelength_step_nm: 600.0 / 23.0,
            background_level: 0.05,
            noise_std,
            allow_rotation: false,
            gain_jitter: 0.0,
        }
    }

    #[test]
    fn noiseless_render_is_exact() {
        let class = noiseless_class();
        let params = desk_params(0.0);
        let r = render_seed_with_truth(&class, &params, &mut stream(3, &[0])).unwrap();
        let wl = r.cube.wavelengths();
        let sig: Vec<f64> = class.signature.sample(&wl).iter().map(|&v| v as f32 as f64).collect();
        let bg = params.background_level as f32 as f64;
        let mut n_in = 0;
        for row in 0..16 {
            for col in 0..48 {
                let s = r.cube.spectrum(row, col);
                if r.interior[row * 48 + col] {
                    n_in += 1;
                    assert_eq!(s, sig.as_slice());
                } else {
                    assert!(s.iter().all(|&v| v == bg));
                }
            }
        }
        assert!(n_in > 100);
    }

    #[test]
    fn noisy_mean_spectrum_tracks_signature() {
        let class = noiseless_class();
        let params = desk_params(0.01);
        let r = render_seed_with_truth(&class, &params, &mut stream(11, &[0])).unwrap();
        let wl = r.cube.wavelengths();
        let sig = class.signature.sample(&wl);
        let n = r.interior.iter().filter(|&&x| x).count() as f64;
        for (b, &expected) in sig.iter().enumerate() {
            let mean = (0..16 * 48)
                .filter(|&p| r.interior[p])
                .map(|p| r.cube.values()[p * 24 + b])
                .sum::<f64>()
                / n;
            assert!(
                (mean - expected).abs() <= 3.0 * 0.01 / n.sqrt() + 1e-6,
                "band {b}: mean {mean} vs {expected}"
            );
        }
    }

    #[test]
    fn oversized_ellipse_is_rejected() {
        let mut class = noiseless_class();
        class.semi_major_px = (90.0, 100.0);
        let params = RenderParams {
            dims: (50, 170, 8),
            ..desk_params(0.0)
        };
        let err = render_seed(&class, &params, &mut stream(0, &[])).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn rotation_flag_changes_orientation() {
        let class = noiseless_class();
        let mut params = desk_params(0.0);
        params.dims = (48, 48, 8);
        params.allow_rotation = true;
        let r = render_seed_with_truth(&class, &params, &mut stream(5, &[1])).unwrap();
        assert!(r.orientation != 0.0);
        params.allow_rotation = false;
        let r = render_seed_with_truth(&class, &params, &mut stream(5, &[1])).unwrap();
        assert_eq!(r.orientation, 0.0);
    }

    #[test]
    fn benchmark_specs_are_valid() {
        for kind in BenchmarkKind::ALL {
            for size in [CubeSize::Desk, CubeSize::PaperSize] {
                benchmark_spec(kind, size).validate().unwrap();
            }
        }
    }

    #[test]
    fn benchmark_spectral_only_shares_shapes() {
        let spec = benchmark_spec(BenchmarkKind::SpectralOnly, CubeSize::Desk);
        let wl = spec.wavelengths();
        for c in &spec.classes {
            assert_eq!(c.semi_major_px, spec.classes[0].semi_major_px);
            assert_eq!(c.semi_minor_px, spec.classes[0].semi_minor_px);
        }
        for i in 0..spec.classes.len() {
            for j in i + 1..spec.classes.len() {
                let a = spec.classes[i].signature.sample(&wl);
                let b = spec.classes[j].signature.sample(&wl);
                let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d.sqrt() > 0.1);
            }
        }
    }

    #[test]
    fn benchmark_counts_and_sizes() {
        assert_eq!(benchmark_spec(BenchmarkKind::Mixed4Class, CubeSize::Desk).classes.len(), 4);
        assert_eq!(benchmark_spec(BenchmarkKind::Easy6Class, CubeSize::Desk).classes.len(), 6);
        assert_eq!(
            benchmark_spec(BenchmarkKind::Mixed4Class, CubeSize::PaperSize).cube_dims,
            (50, 170, 110)
        );
        assert_eq!(benchmark_spec(BenchmarkKind::SpatialOnly, CubeSize::Desk).cube_dims, (16, 48, 24));
        assert!("paddy".parse::<BenchmarkKind>().is_err());
    }

    #[test]
    fn spatial_only_shares_signature() {
        let spec = benchmark_spec(BenchmarkKind::SpatialOnly, CubeSize::Desk);
        for c in &spec.classes {
            assert_eq!(c.signature, spec.classes[0].signature);
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let mut spec = benchmark_spec(BenchmarkKind::Mixed4Class, CubeSize::Desk);
        spec.cubes_per_class = 3;
        let a = generate_samples(&spec, 42).unwrap();
        let b = generate_samples(&spec, 42).unwrap();
        let c = generate_samples(&spec, 43).unwrap();
        assert_eq!(a.len(), 12);
        assert!(a.iter().zip(&b).all(|(x, y)| x.seed.cube == y.seed.cube));
        assert!(a.iter().zip(&c).any(|(x, y)| x.seed.cube != y.seed.cube));
    }
}
