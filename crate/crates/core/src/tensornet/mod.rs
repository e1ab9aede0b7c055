//! A small convolutional network engine with hand-written backpropagation.
//!
//! Datacubes enter with their bands as channels. Every convolution has stride
//! one and "same" padding; spatial reduction happens only in 2×2 max-pool
//! layers placed between stages. Networks are described by a serialisable
//! [`LayerSpec`] layout, from which [`Network`] instantiates parameters.

mod adam;
mod arch;
mod checkpoint;
mod layers;
mod network;
pub mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdc::Datacube;

pub use adam::{adam_update, AdamHyper};
pub use arch::{build_network, ArchConfig, Family};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::Network;
pub use ops::ConvShape;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// `n × h × w × c` values, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * h * w * c {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{h}x{w}x{c} batch",
                values.len()
            )));
        }
        Ok(Self { n, h, w, c, values })
    }

    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            values: vec![0.0; n * h * w * c],
        }
    }

    /// Cubes stacked as samples, bands as channels; values are used as given.
    pub fn from_cubes<'a, I: IntoIterator<Item = &'a Datacube>>(cubes: I) -> Result<Self> {
        let mut dims = None;
        let mut values = Vec::new();
        let mut n = 0;
        for cube in cubes {
            match dims {
                None => dims = Some(cube.dims()),
                Some(d) if d != cube.dims() => {
                    return Err(Error::Shape(format!("cube dims {:?} differ from {d:?}", cube.dims())));
                }
                _ => {}
            }
            values.extend_from_slice(cube.values());
            n += 1;
        }
        let (h, w, c) = dims.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        Self::new(n, h, w, c, values)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.sample_len()..][..self.sample_len()]
    }

    pub fn at(&self, i: usize, r: usize, col: usize, ch: usize) -> f64 {
        self.values[((i * self.h + r) * self.w + col) * self.c + ch]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..*self }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Samples `idx` (in that order) as a new batch.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            values.extend_from_slice(self.sample(i));
        }
        Self {
            n: idx.len(),
            values,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// `(h, w, c)` of one sample.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv(ConvShape),
    BatchNorm { channels: usize },
    Swish,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    Dense { inp: usize, out: usize },
    /// `shortcut(x) + branch(x)`; the shortcut is a 1×1 convolution when present.
    Residual {
        branch: Vec<LayerSpec>,
        projection: Option<ConvShape>,
    },
}

impl LayerSpec {
    pub fn output_shape(&self, (h, w, c): Shape) -> Result<Shape> {
        let mismatch = |what: String| Err(Error::Shape(what));
        match self {
            LayerSpec::Conv(k) => {
                if k.cin != c {
                    return mismatch(format!("conv expects {} channels, input has {c}", k.cin));
                }
                Ok((h, w, k.cout))
            }
            LayerSpec::BatchNorm { channels } => {
                if *channels != c {
                    return mismatch(format!("batch norm over {channels} channels, input has {c}"));
                }
                Ok((h, w, c))
            }
            LayerSpec::Swish => Ok((h, w, c)),
            LayerSpec::MaxPool2 => Ok((h.div_ceil(2), w.div_ceil(2), c)),
            LayerSpec::GlobalAvgPool => Ok((1, 1, c)),
            LayerSpec::Flatten => Ok((1, 1, h * w * c)),
            LayerSpec::Dense { inp, out } => {
                if h * w * c != *inp {
                    return mismatch(format!("dense expects {inp} inputs, got {h}x{w}x{c}"));
                }
                Ok((1, 1, *out))
            }
            LayerSpec::Residual { branch, projection } => {
                let end = layout_output_shape(branch, (h, w, c))?;
                let shortcut = match projection {
                    Some(p) => {
                        if p.kh != 1 || p.kw != 1 {
                            return mismatch("shortcut projection must be 1x1".into());
                        }
                        LayerSpec::Conv(*p).output_shape((h, w, c))?
                    }
                    None => (h, w, c),
                };
                if end != shortcut {
                    return mismatch(format!("residual branch ends at {end:?}, shortcut at {shortcut:?}"));
                }
                Ok(end)
            }
        }
    }

    pub fn conv_layers(&self) -> usize {
        match self {
            LayerSpec::Conv(_) => 1,
            LayerSpec::Residual { branch, projection } => {
                layout_conv_layers(branch) + usize::from(projection.is_some())
            }
            _ => 0,
        }
    }

    pub fn parameters(&self) -> usize {
        match self {
            LayerSpec::Conv(k) => k.weight_len() + k.cout,
            LayerSpec::BatchNorm { channels } => 2 * channels,
            LayerSpec::Dense { inp, out } => inp * out + out,
            LayerSpec::Residual { branch, projection } => {
                layout_parameters(branch) + projection.map_or(0, |p| p.weight_len() + p.cout)
            }
            _ => 0,
        }
    }
}

pub fn layout_output_shape(layout: &[LayerSpec], input: Shape) -> Result<Shape> {
    layout.iter().try_fold(input, |s, l| l.output_shape(s))
}

pub fn layout_conv_layers(layout: &[LayerSpec]) -> usize {
    layout.iter().map(LayerSpec::conv_layers).sum()
}

pub fn layout_parameters(layout: &[LayerSpec]) -> usize {
    layout.iter().map(LayerSpec::parameters).sum()
}
