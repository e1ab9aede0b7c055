//! Runtime layers: parameters, batch-norm running statistics and the
//! activations cached by the last forward pass.

use rand_distr::{Distribution, Normal};

use super::ops::{self, BnCache, ConvShape};
use super::{Batch, LayerSpec, Mode, Param, BN_EPSILON, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone)]
pub(crate) struct BatchNormLayer {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Number of training-mode forward passes folded into the running statistics.
    pub updates: u64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv {
        shape: ConvShape,
        w: Param,
        b: Param,
        input: Option<Batch>,
    },
    BatchNorm(Box<BatchNormLayer>),
    Swish {
        input: Option<Batch>,
    },
    MaxPool2 {
        dims: (usize, usize, usize, usize),
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        dims: (usize, usize, usize, usize),
    },
    Flatten {
        dims: (usize, usize, usize, usize),
    },
    Dense {
        inp: usize,
        out: usize,
        w: Param,
        b: Param,
        input: Option<Batch>,
    },
    Residual {
        branch: Vec<Layer>,
        projection: Option<Box<Layer>>,
    },
}

/// He-normal initialisation; `counter` numbers the weighted layers in build order.
fn he_normal(fan_in: usize, len: usize, seed: u64, counter: &mut u64) -> Vec<f64> {
    let mut rng = stream(seed, &[0x7e11, *counter]);
    *counter += 1;
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

impl Layer {
    pub fn build(spec: &LayerSpec, seed: u64, counter: &mut u64) -> Layer {
        match spec {
            LayerSpec::Conv(k) => Layer::conv(*k, seed, counter),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(Box::new(BatchNormLayer {
                gamma: Param::new(vec![1.0; *channels]),
                beta: Param::new(vec![0.0; *channels]),
                running_mean: vec![0.0; *channels],
                running_var: vec![1.0; *channels],
                updates: 0,
                cache: None,
            })),
            LayerSpec::Swish => Layer::Swish { input: None },
            LayerSpec::MaxPool2 => Layer::MaxPool2 {
                dims: (0, 0, 0, 0),
                argmax: Vec::new(),
            },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool { dims: (0, 0, 0, 0) },
            LayerSpec::Flatten => Layer::Flatten { dims: (0, 0, 0, 0) },
            LayerSpec::Dense { inp, out } => Layer::Dense {
                inp: *inp,
                out: *out,
                w: Param::new(he_normal(*inp, inp * out, seed, counter)),
                b: Param::new(vec![0.0; *out]),
                input: None,
            },
            LayerSpec::Residual { branch, projection } => Layer::Residual {
                branch: branch.iter().map(|s| Layer::build(s, seed, counter)).collect(),
                projection: projection.map(|k| Box::new(Layer::conv(k, seed, counter))),
            },
        }
    }

    fn conv(k: ConvShape, seed: u64, counter: &mut u64) -> Layer {
        Layer::Conv {
            shape: k,
            w: Param::new(he_normal(k.fan_in(), k.weight_len(), seed, counter)),
            b: Param::new(vec![0.0; k.cout]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: Batch, mode: Mode) -> Result<Batch> {
        match self {
            Layer::Conv { shape, w, b, input } => {
                let y = ops::conv2d_forward(&x, shape, &w.value, &b.value)?;
                *input = Some(x);
                Ok(y)
            }
            Layer::BatchNorm(bn) => match mode {
                Mode::Train => {
                    let out = ops::batchnorm_train_forward(&x, &bn.gamma.value, &bn.beta.value, BN_EPSILON)?;
                    for ch in 0..out.mean.len() {
                        bn.running_mean[ch] = BN_MOMENTUM * bn.running_mean[ch] + (1.0 - BN_MOMENTUM) * out.mean[ch];
                        bn.running_var[ch] = BN_MOMENTUM * bn.running_var[ch] + (1.0 - BN_MOMENTUM) * out.var[ch];
                    }
                    bn.updates += 1;
                    bn.cache = Some(out.cache);
                    Ok(out.y)
                }
                Mode::Infer => bn.infer(&x),
            },
            Layer::Swish { input } => {
                let y = ops::swish_forward(&x);
                *input = Some(x);
                Ok(y)
            }
            Layer::MaxPool2 { dims, argmax } => {
                let (y, arg) = ops::maxpool2_forward(&x);
                *dims = x.dims();
                *argmax = arg;
                Ok(y)
            }
            Layer::GlobalAvgPool { dims } => {
                *dims = x.dims();
                Ok(ops::global_avg_pool_forward(&x))
            }
            Layer::Flatten { dims } => {
                *dims = x.dims();
                let len = x.sample_len();
                Batch::new(x.n, 1, 1, len, x.values)
            }
            Layer::Dense { inp, out, w, b, input } => {
                let y = ops::dense_forward(&x, *inp, *out, &w.value, &b.value)?;
                *input = Some(x);
                Ok(y)
            }
            Layer::Residual { branch, projection } => {
                let shortcut = match projection {
                    Some(p) => p.forward(x.clone(), mode)?,
                    None => x.clone(),
                };
                let mut y = forward_all(branch, x, mode)?;
                if y.dims() != shortcut.dims() {
                    return Err(Error::Shape("residual branch and shortcut disagree".into()));
                }
                for (a, s) in y.values.iter_mut().zip(&shortcut.values) {
                    *a += s;
                }
                Ok(y)
            }
        }
    }

    /// Inference-mode forward without touching caches.
    pub fn infer(&self, x: &Batch) -> Result<Batch> {
        match self {
            Layer::Conv { shape, w, b, .. } => ops::conv2d_forward(x, shape, &w.value, &b.value),
            Layer::BatchNorm(bn) => bn.infer(x),
            Layer::Swish { .. } => Ok(ops::swish_forward(x)),
            Layer::MaxPool2 { .. } => Ok(ops::maxpool2_forward(x).0),
            Layer::GlobalAvgPool { .. } => Ok(ops::global_avg_pool_forward(x)),
            Layer::Flatten { .. } => Batch::new(x.n, 1, 1, x.sample_len(), x.values.clone()),
            Layer::Dense { inp, out, w, b, .. } => ops::dense_forward(x, *inp, *out, &w.value, &b.value),
            Layer::Residual { branch, projection } => {
                let mut y = infer_all(branch, x)?;
                let shortcut = match projection {
                    Some(p) => p.infer(x)?,
                    None => x.clone(),
                };
                for (a, s) in y.values.iter_mut().zip(&shortcut.values) {
                    *a += s;
                }
                Ok(y)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient (`None` when not requested).
    pub fn backward(&mut self, dy: Batch, mode: Mode, need_dx: bool) -> Result<Option<Batch>> {
        let missing = || Error::InvalidArgument("backward called before forward".into());
        match self {
            Layer::Conv { shape, w, b, input } => {
                let x = input.as_ref().ok_or_else(missing)?;
                ops::conv2d_backward(x, shape, &w.value, &dy, &mut w.grad, &mut b.grad, need_dx)
            }
            Layer::BatchNorm(bn) => match mode {
                Mode::Train => {
                    let cache = bn.cache.as_ref().ok_or_else(missing)?;
                    let dx = ops::batchnorm_train_backward(&dy, &bn.gamma.value, cache, &mut bn.gamma.grad, &mut bn.beta.grad)?;
                    Ok(Some(dx))
                }
                Mode::Infer => Ok(Some(ops::batchnorm_infer_backward(&dy, &bn.gamma.value, &bn.running_var, BN_EPSILON)?)),
            },
            Layer::Swish { input } => {
                let x = input.as_ref().ok_or_else(missing)?;
                Ok(Some(ops::swish_backward(x, &dy)))
            }
            Layer::MaxPool2 { dims, argmax } => Ok(Some(ops::maxpool2_backward(*dims, argmax, &dy))),
            Layer::GlobalAvgPool { dims } => Ok(Some(ops::global_avg_pool_backward(*dims, &dy))),
            Layer::Flatten { dims } => {
                let (n, h, w, c) = *dims;
                Ok(Some(Batch::new(n, h, w, c, dy.values)?))
            }
            Layer::Dense { inp, out, w, b, input } => {
                let x = input.as_ref().ok_or_else(missing)?;
                Ok(Some(ops::dense_backward(x, *inp, *out, &w.value, &dy, &mut w.grad, &mut b.grad)?))
            }
            Layer::Residual { branch, projection } => {
                let shortcut_dx = match projection {
                    Some(p) => p.backward(dy.clone(), mode, true)?.expect("requested"),
                    None => dy.clone(),
                };
                let mut dx = backward_all(branch, dy, mode, true)?.expect("requested");
                for (a, s) in dx.values.iter_mut().zip(&shortcut_dx.values) {
                    *a += s;
                }
                Ok(Some(dx))
            }
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Layer::Conv { w, b, .. } | Layer::Dense { w, b, .. } => {
                f(w);
                f(b);
            }
            Layer::BatchNorm(bn) => {
                f(&bn.gamma);
                f(&bn.beta);
            }
            Layer::Residual { branch, projection } => {
                branch.iter().for_each(|l| l.visit_params(f));
                if let Some(p) = projection {
                    p.visit_params(f);
                }
            }
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Layer::Conv { w, b, .. } | Layer::Dense { w, b, .. } => {
                f(w);
                f(b);
            }
            Layer::BatchNorm(bn) => {
                f(&mut bn.gamma);
                f(&mut bn.beta);
            }
            Layer::Residual { branch, projection } => {
                branch.iter_mut().for_each(|l| l.visit_params_mut(f));
                if let Some(p) = projection {
                    p.visit_params_mut(f);
                }
            }
            _ => {}
        }
    }

    pub fn visit_batchnorm_mut(&mut self, f: &mut dyn FnMut(&mut BatchNormLayer)) {
        match self {
            Layer::BatchNorm(bn) => f(bn),
            Layer::Residual { branch, projection } => {
                branch.iter_mut().for_each(|l| l.visit_batchnorm_mut(f));
                if let Some(p) = projection {
                    p.visit_batchnorm_mut(f);
                }
            }
            _ => {}
        }
    }

    pub fn visit_batchnorm<'a>(&'a self, f: &mut dyn FnMut(&'a BatchNormLayer)) {
        match self {
            Layer::BatchNorm(bn) => f(bn),
            Layer::Residual { branch, projection } => {
                branch.iter().for_each(|l| l.visit_batchnorm(f));
                if let Some(p) = projection {
                    p.visit_batchnorm(f);
                }
            }
            _ => {}
        }
    }

    pub fn conv_layers(&self) -> usize {
        match self {
            Layer::Conv { .. } => 1,
            Layer::Residual { branch, projection } => {
                branch.iter().map(Layer::conv_layers).sum::<usize>() + projection.as_ref().map_or(0, |p| p.conv_layers())
            }
            _ => 0,
        }
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv { input, .. } | Layer::Swish { input } | Layer::Dense { input, .. } => *input = None,
            Layer::BatchNorm(bn) => bn.cache = None,
            Layer::MaxPool2 { argmax, .. } => *argmax = Vec::new(),
            Layer::Residual { branch, projection } => {
                branch.iter_mut().for_each(Layer::clear_cache);
                if let Some(p) = projection {
                    p.clear_cache();
                }
            }
            _ => {}
        }
    }
}

impl BatchNormLayer {
    fn infer(&self, x: &Batch) -> Result<Batch> {
        if self.updates == 0 {
            return Err(Error::InvalidArgument(
                "batch norm used in inference mode before any training update".into(),
            ));
        }
        ops::batchnorm_infer_forward(x, &self.gamma.value, &self.beta.value, &self.running_mean, &self.running_var, BN_EPSILON)
    }
}

pub(crate) fn forward_all(layers: &mut [Layer], x: Batch, mode: Mode) -> Result<Batch> {
    layers.iter_mut().try_fold(x, |acc, l| l.forward(acc, mode))
}

pub(crate) fn infer_all(layers: &[Layer], x: &Batch) -> Result<Batch> {
    let mut cur = x.clone();
    for l in layers {
        cur = l.infer(&cur)?;
    }
    Ok(cur)
}

/// Backward through `layers` in reverse; the input gradient of the first layer only when `need_dx`.
pub(crate) fn backward_all(layers: &mut [Layer], dy: Batch, mode: Mode, need_dx: bool) -> Result<Option<Batch>> {
    let mut g = dy;
    let last = layers.len();
    for (i, l) in layers.iter_mut().enumerate().rev() {
        let want = need_dx || i > 0;
        match l.backward(g, mode, want)? {
            Some(next) => g = next,
            None => {
                debug_assert!(i == 0 && !need_dx);
                return Ok(None);
            }
        }
    }
    if last == 0 || need_dx {
        Ok(Some(g))
    } else {
        Ok(None)
    }
}
