//! Datacube container and the HSDC on-disk format.
//!
//! A datacube is an `H × W × B` reflectance volume stored band-interleaved by
//! pixel: the value at `(row, col, band)` lives at `(row * W + col) * B + band`.
//! Values are kept in 64-bit memory; the file format stores them as 32-bit
//! floats, so a save/load round trip is exact for any f32-representable cube
//! (which includes everything produced by the generator or read from disk).
//!
//! File layout (little-endian, 36-byte header):
//!
//! ```text
//! "HSDC" | version u32 = 1 | H u32 | W u32 | B u32 | start_nm f64 | step_nm f64 | H*W*B f32
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSDC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 2 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Datacube {
    height: usize,
    width: usize,
    bands: usize,
    wavelength_start_nm: f64,
    wavelength_step_nm: f64,
    values: Vec<f64>,
}

impl Datacube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        wavelength_start_nm: f64,
        wavelength_step_nm: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidData(format!(
                "datacube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "datacube {height}x{width}x{bands} needs {expected} values, got {}",
                values.len()
            )));
        }
        if !(wavelength_step_nm > 0.0 && wavelength_step_nm.is_finite()) {
            return Err(Error::InvalidData(format!(
                "wavelength step must be positive, got {wavelength_step_nm}"
            )));
        }
        if !wavelength_start_nm.is_finite() {
            return Err(Error::InvalidData("wavelength start is not finite".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData(format!(
                "value {} at flat index {i} is not a finite non-negative reflectance",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            bands,
            wavelength_start_nm,
            wavelength_step_nm,
            values,
        })
    }

    /// All-zero cube.
    pub fn zeros(height: usize, width: usize, bands: usize, start_nm: f64, step_nm: f64) -> Result<Self> {
        Self::new(height, width, bands, start_nm, step_nm, vec![0.0; height * width * bands])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn wavelength_start_nm(&self) -> f64 {
        self.wavelength_start_nm
    }

    pub fn wavelength_step_nm(&self) -> f64 {
        self.wavelength_step_nm
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.bands)
            .map(|b| self.wavelength_start_nm + b as f64 * self.wavelength_step_nm)
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (row * self.width + col) * self.bands + band
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[self.index(row, col, band)]
    }

    /// Spectrum of one pixel.
    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    /// Same geometry and wavelength axis, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.bands,
            self.wavelength_start_nm,
            self.wavelength_step_nm,
            values,
        )
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidData("image dimensions must be positive".into()));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("image contains non-finite values".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Divides every value by the cube's global maximum.
pub fn normalize_max(cube: &Datacube) -> Result<Datacube> {
    let max = cube.max_value();
    if max <= 0.0 {
        return Err(Error::Degenerate("cannot max-normalise an all-zero datacube".into()));
    }
    cube.with_values(cube.values.iter().map(|v| v / max).collect())
}

/// Sum over bands of squared values at each pixel.
pub fn ss_image(cube: &Datacube) -> GrayImage {
    let values = cube
        .values
        .chunks_exact(cube.bands)
        .map(|spectrum| spectrum.iter().map(|v| v * v).sum())
        .collect();
    GrayImage {
        height: cube.height,
        width: cube.width,
        values,
    }
}

pub fn write_datacube<W: Write>(cube: &Datacube, mut out: W) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [cube.height, cube.width, cube.bands] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("dimension {dim} does not fit in u32")))?;
        header.extend_from_slice(&dim.to_le_bytes());
    }
    header.extend_from_slice(&cube.wavelength_start_nm.to_le_bytes());
    header.extend_from_slice(&cube.wavelength_step_nm.to_le_bytes());
    debug_assert_eq!(header.len(), HEADER_LEN);
    out.write_all(&header)?;

    let mut payload = Vec::with_capacity(cube.values.len() * 4);
    for &v in &cube.values {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

pub fn read_datacube<R: Read>(mut input: R) -> Result<Datacube> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = input.read(&mut header[got..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: got as u64,
            });
        }
        got += n;
    }
    if &header[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"HSDC\"",
            String::from_utf8_lossy(&header[0..4])
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported HSDC version {version}")));
    }
    let (h, w, b) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let (start, step) = (f64_at(20), f64_at(28));

    let count = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(b))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let expected = count as u64 * 4;
    let mut payload = Vec::with_capacity(count * 4);
    input.read_to_end(&mut payload)?;
    if payload.len() as u64 != expected {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64 + expected,
            found: HEADER_LEN as u64 + payload.len() as u64,
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Datacube::new(h, w, b, start, step, values)
}

pub fn save_datacube(cube: &Datacube, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    write_datacube(cube, BufWriter::new(file))
}

pub fn load_datacube(path: impl AsRef<Path>) -> Result<Datacube> {
    let file = fs::File::open(path.as_ref())?;
    read_datacube(BufReader::new(file))
}

/// Size in bytes of the HSDC file for a cube of the given dimensions.
pub fn encoded_len(height: usize, width: usize, bands: usize) -> u64 {
    HEADER_LEN as u64 + 4 * (height * width * bands) as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub cube_path: String,
    pub label: usize,
    pub class_name: String,
}

/// Labelled list of cube files. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    /// Class names indexed by label.
    pub fn class_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.num_classes()];
        for e in &self.entries {
            names[e.label] = e.class_name.clone();
        }
        names
    }

    /// Checks that class indices are contiguous from 0 and each label keeps one name.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let mut names: Vec<Option<&str>> = vec![None; k];
        for e in &self.entries {
            match names[e.label] {
                None => names[e.label] = Some(&e.class_name),
                Some(n) if n != e.class_name => {
                    return Err(Error::Format(format!(
                        "label {} has two class names: {n:?} and {:?}",
                        e.label, e.class_name
                    )))
                }
                _ => {}
            }
        }
        if let Some(missing) = names.iter().position(|n| n.is_none()) {
            return Err(Error::Format(format!(
                "class indices not contiguous: label {missing} never appears"
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.cube_path, e.label, e.class_name));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(path), Some(label), Some(name)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 3 tab-separated fields",
                    lineno + 1
                )));
            };
            let label = label.trim().parse::<usize>().map_err(|_| {
                Error::Format(format!("manifest line {}: bad label {label:?}", lineno + 1))
            })?;
            entries.push(ManifestEntry {
                cube_path: path.to_string(),
                label,
                class_name: name.to_string(),
            });
        }
        let manifest = Self { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = fs::File::open(path.as_ref())?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::parse(&text)
    }
}

/// Loads every cube referenced by a manifest, resolving paths against `base_dir`.
pub fn load_manifest_cubes(manifest: &Manifest, base_dir: impl AsRef<Path>) -> Result<Vec<Datacube>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let p: PathBuf = base_dir.as_ref().join(&e.cube_path);
            if !p.exists() {
                return Err(Error::Format(format!("manifest path {} does not exist", p.display())));
            }
            load_datacube(p)
        })
        .collect()
}
