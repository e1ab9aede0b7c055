//! Stateless forward and backward kernels for every layer type.
//!
//! Tensors are `n × h × w × c` in row-major (channels-last) order. Convolution
//! weights are laid out `[kh][kw][cin][cout]`, dense weights `[in][out]`.

use serde::{Deserialize, Serialize};

use super::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.kh * self.kw * self.cin * self.cout
    }

    pub fn fan_in(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Leading zero padding; the remainder of `k − 1` goes after the data.
    fn pad(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }
}

fn check_conv(x: &Batch, k: &ConvShape, w: &[f64], b: &[f64]) -> Result<()> {
    if k.kh == 0 || k.kw == 0 || k.cin == 0 || k.cout == 0 {
        return Err(Error::Shape(format!("empty convolution kernel {k:?}")));
    }
    if x.c != k.cin {
        return Err(Error::Shape(format!("conv expects {} input channels, got {}", k.cin, x.c)));
    }
    if w.len() != k.weight_len() || b.len() != k.cout {
        return Err(Error::Shape(format!(
            "conv parameters: {} weights / {} biases for {k:?}",
            w.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Stride-1 cross-correlation with "same" zero padding.
pub fn conv2d_forward(x: &Batch, k: &ConvShape, w: &[f64], b: &[f64]) -> Result<Batch> {
    check_conv(x, k, w, b)?;
    let (n, h, wd) = (x.n, x.h, x.w);
    let (pt, pl) = k.pad();
    let mut y = vec![0.0; n * h * wd * k.cout];
    for i in 0..n {
        for r in 0..h {
            for c in 0..wd {
                let out = &mut y[((i * h + r) * wd + c) * k.cout..][..k.cout];
                out.copy_from_slice(b);
                for ki in 0..k.kh {
                    let rr = r as isize + ki as isize - pt as isize;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kj in 0..k.kw {
                        let cc = c as isize + kj as isize - pl as isize;
                        if cc < 0 || cc >= wd as isize {
                            continue;
                        }
                        let xs = &x.values[((i * h + rr as usize) * wd + cc as usize) * k.cin..][..k.cin];
                        let wk = &w[(ki * k.kw + kj) * k.cin * k.cout..][..k.cin * k.cout];
                        for (&xv, wrow) in xs.iter().zip(wk.chunks_exact(k.cout)) {
                            for (o, &wv) in out.iter_mut().zip(wrow) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Batch::new(n, h, wd, k.cout, y)
}

/// Accumulates weight and bias gradients into `dw`, `db`; returns the input gradient if requested.
pub fn conv2d_backward(
    x: &Batch,
    k: &ConvShape,
    w: &[f64],
    dy: &Batch,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Result<Option<Batch>> {
    check_conv(x, k, w, db)?;
    if dy.dims() != (x.n, x.h, x.w, k.cout) || dw.len() != w.len() {
        return Err(Error::Shape("conv backward: gradient shape mismatch".into()));
    }
    let (n, h, wd) = (x.n, x.h, x.w);
    let (pt, pl) = k.pad();
    let mut dx = if need_dx { vec![0.0; x.values.len()] } else { Vec::new() };
    for i in 0..n {
        for r in 0..h {
            for c in 0..wd {
                let g = &dy.values[((i * h + r) * wd + c) * k.cout..][..k.cout];
                for (d, &gv) in db.iter_mut().zip(g) {
                    *d += gv;
                }
                for ki in 0..k.kh {
                    let rr = r as isize + ki as isize - pt as isize;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kj in 0..k.kw {
                        let cc = c as isize + kj as isize - pl as isize;
                        if cc < 0 || cc >= wd as isize {
                            continue;
                        }
                        let base = ((i * h + rr as usize) * wd + cc as usize) * k.cin;
                        let xs = &x.values[base..][..k.cin];
                        let off = (ki * k.kw + kj) * k.cin * k.cout;
                        let wk = &w[off..][..k.cin * k.cout];
                        let dwk = &mut dw[off..][..k.cin * k.cout];
                        for (ci, (wrow, dwrow)) in wk.chunks_exact(k.cout).zip(dwk.chunks_exact_mut(k.cout)).enumerate() {
                            let xv = xs[ci];
                            let mut s = 0.0;
                            for ((&wv, dwv), &gv) in wrow.iter().zip(dwrow.iter_mut()).zip(g) {
                                s += wv * gv;
                                *dwv += xv * gv;
                            }
                            if need_dx {
                                dx[base + ci] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    if need_dx {
        Ok(Some(Batch::new(n, h, wd, k.cin, dx)?))
    } else {
        Ok(None)
    }
}

/// Per-channel statistics retained for the training-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Output, batch mean, biased batch variance and backward cache.
pub struct BnTrainOutput {
    pub y: Batch,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub cache: BnCache,
}

pub fn batchnorm_train_forward(x: &Batch, gamma: &[f64], beta: &[f64], eps: f64) -> Result<BnTrainOutput> {
    let c = x.c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("batch norm over {c} channels got {} scales", gamma.len())));
    }
    let m = x.n * x.h * x.w;
    if m < 2 {
        return Err(Error::Shape("training-mode batch norm needs at least 2 values per channel".into()));
    }
    let mut mean = vec![0.0; c];
    for px in x.values.chunks_exact(c) {
        for (s, &v) in mean.iter_mut().zip(px) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|s| *s /= m as f64);
    let mut var = vec![0.0; c];
    for px in x.values.chunks_exact(c) {
        for ((s, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|s| *s /= m as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.values.len()];
    let mut y = vec![0.0; x.values.len()];
    for ((px, hx), yx) in x.values.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
        for ch in 0..c {
            hx[ch] = (px[ch] - mean[ch]) * inv_std[ch];
            yx[ch] = gamma[ch] * hx[ch] + beta[ch];
        }
    }
    Ok(BnTrainOutput {
        y: Batch::new(x.n, x.h, x.w, c, y)?,
        mean,
        var,
        cache: BnCache { xhat, inv_std },
    })
}

/// Returns `dx`; accumulates into `dgamma`, `dbeta`.
pub fn batchnorm_train_backward(
    dy: &Batch,
    gamma: &[f64],
    cache: &BnCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Result<Batch> {
    let c = dy.c;
    if cache.xhat.len() != dy.values.len() || gamma.len() != c {
        return Err(Error::Shape("batch norm backward: shape mismatch".into()));
    }
    let m = (dy.n * dy.h * dy.w) as f64;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (g, hx) in dy.values.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            sum_g[ch] += g[ch];
            sum_gx[ch] += g[ch] * hx[ch];
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_gx[ch];
        dbeta[ch] += sum_g[ch];
    }
    let mut dx = vec![0.0; dy.values.len()];
    for ((g, hx), d) in dy.values.chunks_exact(c).zip(cache.xhat.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
        for ch in 0..c {
            d[ch] = gamma[ch] * cache.inv_std[ch] * (g[ch] - sum_g[ch] / m - hx[ch] * sum_gx[ch] / m);
        }
    }
    Batch::new(dy.n, dy.h, dy.w, c, dx)
}

pub fn batchnorm_infer_forward(
    x: &Batch,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<Batch> {
    let c = x.c;
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&l| l != c) {
        return Err(Error::Shape(format!("batch norm over {c} channels: parameter length mismatch")));
    }
    let scale: Vec<f64> = (0..c).map(|ch| gamma[ch] / (var[ch] + eps).sqrt()).collect();
    let mut y = x.values.clone();
    for px in y.chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] = (px[ch] - mean[ch]) * scale[ch] + beta[ch];
        }
    }
    Batch::new(x.n, x.h, x.w, c, y)
}

/// Input gradient of the inference-mode (affine) normalisation.
pub fn batchnorm_infer_backward(dy: &Batch, gamma: &[f64], var: &[f64], eps: f64) -> Result<Batch> {
    let c = dy.c;
    let scale: Vec<f64> = (0..c).map(|ch| gamma[ch] / (var[ch] + eps).sqrt()).collect();
    let mut dx = dy.values.clone();
    for px in dx.chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] *= scale[ch];
        }
    }
    Batch::new(dy.n, dy.h, dy.w, c, dx)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn swish_forward(x: &Batch) -> Batch {
    x.map(swish)
}

pub fn swish_backward(x: &Batch, dy: &Batch) -> Batch {
    let values = x.values.iter().zip(&dy.values).map(|(&v, &g)| g * swish_grad(v)).collect();
    Batch { values, ..*dy }
}

/// 2×2 non-overlapping max; odd trailing rows/columns are replicated first.
/// Returns the output and, per output element, the flat input index of the winner.
pub fn maxpool2_forward(x: &Batch) -> (Batch, Vec<usize>) {
    let (n, h, w, c) = x.dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for i in 0..n {
        for r in 0..oh {
            for col in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let rr = (2 * r + dr).min(h - 1);
                            let cc = (2 * col + dc).min(w - 1);
                            let idx = ((i * h + rr) * w + cc) * c + ch;
                            if x.values[idx] > best || best_idx == usize::MAX {
                                best = x.values[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (
        Batch {
            n,
            h: oh,
            w: ow,
            c,
            values: y,
        },
        arg,
    )
}

pub fn maxpool2_backward(input_dims: (usize, usize, usize, usize), argmax: &[usize], dy: &Batch) -> Batch {
    let (n, h, w, c) = input_dims;
    let mut dx = vec![0.0; n * h * w * c];
    for (&idx, &g) in argmax.iter().zip(&dy.values) {
        dx[idx] += g;
    }
    Batch { n, h, w, c, values: dx }
}

pub fn global_avg_pool_forward(x: &Batch) -> Batch {
    let (n, h, w, c) = x.dims();
    let hw = (h * w) as f64;
    let mut y = vec![0.0; n * c];
    for i in 0..n {
        let out = &mut y[i * c..][..c];
        for px in x.values[i * h * w * c..][..h * w * c].chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= hw);
    }
    Batch { n, h: 1, w: 1, c, values: y }
}

pub fn global_avg_pool_backward(input_dims: (usize, usize, usize, usize), dy: &Batch) -> Batch {
    let (n, h, w, c) = input_dims;
    let hw = (h * w) as f64;
    let mut dx = vec![0.0; n * h * w * c];
    for i in 0..n {
        let g = &dy.values[i * c..][..c];
        for px in dx[i * h * w * c..][..h * w * c].chunks_exact_mut(c) {
            for (d, &gv) in px.iter_mut().zip(g) {
                *d = gv / hw;
            }
        }
    }
    Batch { n, h, w, c, values: dx }
}

/// `y = x W + b` on rows of length `inp` (the spatial axes must already be flat).
pub fn dense_forward(x: &Batch, inp: usize, out: usize, w: &[f64], b: &[f64]) -> Result<Batch> {
    if x.h * x.w * x.c != inp || w.len() != inp * out || b.len() != out {
        return Err(Error::Shape(format!(
            "dense {inp}->{out} applied to {}x{}x{} input",
            x.h, x.w, x.c
        )));
    }
    let mut y = vec![0.0; x.n * out];
    for (row, yrow) in x.values.chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
        yrow.copy_from_slice(b);
        for (&xv, wrow) in row.iter().zip(w.chunks_exact(out)) {
            for (o, &wv) in yrow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Batch::new(x.n, 1, 1, out, y)
}

/// Accumulates `dw`, `db`; returns the input gradient shaped like `x`.
pub fn dense_backward(
    x: &Batch,
    inp: usize,
    out: usize,
    w: &[f64],
    dy: &Batch,
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Batch> {
    if dy.values.len() != x.n * out || x.values.len() != x.n * inp {
        return Err(Error::Shape("dense backward: shape mismatch".into()));
    }
    let mut dx = vec![0.0; x.values.len()];
    for ((row, g), drow) in x.values.chunks_exact(inp).zip(dy.values.chunks_exact(out)).zip(dx.chunks_exact_mut(inp)) {
        for (d, &gv) in db.iter_mut().zip(g) {
            *d += gv;
        }
        for ((&xv, wrow), (dwrow, dxv)) in row
            .iter()
            .zip(w.chunks_exact(out))
            .zip(dw.chunks_exact_mut(out).zip(drow.iter_mut()))
        {
            let mut s = 0.0;
            for ((&wv, dwv), &gv) in wrow.iter().zip(dwrow.iter_mut()).zip(g) {
                s += wv * gv;
                *dwv += xv * gv;
            }
            *dxv = s;
        }
    }
    Ok(Batch { values: dx, ..*x })
}

/// Row-wise max-subtracted softmax of `n × k` scores.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut p = logits.to_vec();
    for row in p.chunks_exact_mut(k) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    p
}

/// Mean cross-entropy and its gradient `(p − onehot) / n` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Batch, labels: &[usize]) -> Result<(f64, Batch)> {
    let k = logits.h * logits.w * logits.c;
    let n = logits.n;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {k})")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for ((row, g), &label) in logits.values.chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let log_z = z.ln() + mx;
        loss += log_z - row[label];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, Batch::new(n, 1, 1, k, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_batch(seed: u64, n: usize, h: usize, w: usize, c: usize) -> Batch {
        let mut rng = stream(seed, &[]);
        Batch::new(n, h, w, c, (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_vec(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = stream(seed, &[1]);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Central difference of `f` along coordinate `i` of `v`.
    fn central<F: FnMut(&[f64]) -> f64>(v: &[f64], i: usize, mut f: F) -> f64 {
        let h = 1e-6 * (1.0 + v[i].abs());
        let mut p = v.to_vec();
        p[i] += h;
        let fp = f(&p);
        p[i] -= 2.0 * h;
        let fm = f(&p);
        (fp - fm) / (2.0 * h)
    }

    fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        assert!(rel < tol, "{what}: analytic {analytic} numeric {numeric} rel {rel}");
    }

    #[test]
    fn one_by_one_identity_kernel() {
        let x = random_batch(1, 2, 3, 4, 3);
        let k = ConvShape { kh: 1, kw: 1, cin: 3, cout: 3 };
        let mut w = vec![0.0; 9];
        for ch in 0..3 {
            w[ch * 3 + ch] = 1.0;
        }
        let y = conv2d_forward(&x, &k, &w, &[0.0; 3]).unwrap();
        assert_eq!(y.values, x.values);
    }

    #[test]
    fn two_by_two_same_padding_by_hand() {
        let x = Batch::new(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = ConvShape { kh: 2, kw: 2, cin: 1, cout: 1 };
        let y = conv2d_forward(&x, &k, &[1.0, 0.0, 0.0, 1.0], &[0.0]).unwrap();
        assert_eq!(y.values, vec![5.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = random_batch(1, 1, 3, 3, 2);
        let k = ConvShape { kh: 3, kw: 3, cin: 3, cout: 1 };
        assert!(conv2d_forward(&x, &k, &vec![0.0; 27], &[0.0]).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (seed, (n, h, w, cin, cout, kh, kw)) in
            [(2, 5, 6, 3, 4, 3, 3), (1, 4, 4, 2, 2, 2, 2), (3, 3, 7, 2, 3, 1, 3)].into_iter().enumerate()
        {
            let seed = seed as u64;
            let k = ConvShape { kh, kw, cin, cout };
            let x = random_batch(seed, n, h, w, cin);
            let wt = random_vec(seed + 10, k.weight_len());
            let b = random_vec(seed + 20, cout);
            let r = random_vec(seed + 30, n * h * w * cout);
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; cout];
            let dy = Batch::new(n, h, w, cout, r.clone()).unwrap();
            let dx = conv2d_backward(&x, &k, &wt, &dy, &mut dw, &mut db, true).unwrap().unwrap();
            let loss_x = |v: &[f64]| dot(&conv2d_forward(&x.with_values(v.to_vec()), &k, &wt, &b).unwrap().values, &r);
            for i in 0..x.values.len() {
                assert_close(dx.values[i], central(&x.values, i, loss_x), 1e-4, "conv dx");
            }
            let loss_w = |v: &[f64]| dot(&conv2d_forward(&x, &k, v, &b).unwrap().values, &r);
            for i in 0..wt.len() {
                assert_close(dw[i], central(&wt, i, loss_w), 1e-4, "conv dw");
            }
            let loss_b = |v: &[f64]| dot(&conv2d_forward(&x, &k, &wt, v).unwrap().values, &r);
            for i in 0..cout {
                assert_close(db[i], central(&b, i, loss_b), 1e-4, "conv db");
            }
        }
    }

    #[test]
    fn batchnorm_constant_channels_give_zero() {
        let x = Batch::new(2, 2, 2, 2, (0..16).map(|i| if i % 2 == 0 { 3.0 } else { -1.0 }).collect()).unwrap();
        let out = batchnorm_train_forward(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(out.y.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_normalises_per_channel() {
        let x = random_batch(4, 3, 4, 5, 3).map(|v| 5.0 * v + 2.0);
        let out = batchnorm_train_forward(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = out.y.values.iter().skip(ch).step_by(3).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_needs_two_values() {
        let x = random_batch(1, 1, 1, 1, 2);
        assert!(batchnorm_train_forward(&x, &[1.0; 2], &[0.0; 2], 1e-5).is_err());
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let (n, h, w, c) = (3, 3, 4, 2);
        let x = random_batch(7, n, h, w, c);
        let gamma = vec![1.3, -0.7];
        let beta = vec![0.2, 0.5];
        let r = random_vec(8, x.values.len());
        let out = batchnorm_train_forward(&x, &gamma, &beta, 1e-5).unwrap();
        let mut dg = vec![0.0; c];
        let mut dbt = vec![0.0; c];
        let dy = Batch::new(n, h, w, c, r.clone()).unwrap();
        let dx = batchnorm_train_backward(&dy, &gamma, &out.cache, &mut dg, &mut dbt).unwrap();
        let f = |xv: &[f64], g: &[f64], b: &[f64]| {
            dot(&batchnorm_train_forward(&x.with_values(xv.to_vec()), g, b, 1e-5).unwrap().y.values, &r)
        };
        for i in 0..x.values.len() {
            assert_close(dx.values[i], central(&x.values, i, |v| f(v, &gamma, &beta)), 1e-4, "bn dx");
        }
        for i in 0..c {
            assert_close(dg[i], central(&gamma, i, |v| f(&x.values, v, &beta)), 1e-4, "bn dgamma");
            assert_close(dbt[i], central(&beta, i, |v| f(&x.values, &gamma, v)), 1e-4, "bn dbeta");
        }

        let mean = vec![0.1, -0.3];
        let var = vec![0.5, 2.0];
        let dxi = batchnorm_infer_backward(&dy, &gamma, &var, 1e-5).unwrap();
        let fi = |xv: &[f64]| {
            dot(&batchnorm_infer_forward(&x.with_values(xv.to_vec()), &gamma, &beta, &mean, &var, 1e-5).unwrap().values, &r)
        };
        for i in 0..x.values.len() {
            assert_close(dxi.values[i], central(&x.values, i, fi), 1e-6, "bn infer dx");
        }
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert_eq!(swish_grad(0.0), 0.5);
        assert!((swish(10.0) - 9.99955).abs() < 1e-5);
        let x = random_batch(9, 2, 3, 3, 2).map(|v| 4.0 * v);
        let r = random_vec(10, x.values.len());
        let dx = swish_backward(&x, &Batch { values: r.clone(), ..x });
        for i in 0..x.values.len() {
            let num = central(&x.values, i, |v| dot(&swish_forward(&x.with_values(v.to_vec())).values, &r));
            assert_close(dx.values[i], num, 1e-6, "swish");
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Batch::new(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2_forward(&x);
        assert_eq!((y.h, y.w, y.values.clone()), (1, 1, vec![4.0]));
        assert_eq!(arg, vec![3]);

        let flat = Batch::new(1, 4, 4, 1, vec![2.0; 16]).unwrap();
        let (y, arg) = maxpool2_forward(&flat);
        assert!(y.values.iter().all(|&v| v == 2.0));
        let dx = maxpool2_backward(flat.dims(), &arg, &y.map(|_| 1.0));
        assert_eq!(dx.values.iter().filter(|&&g| g != 0.0).count(), 4);
        assert_eq!(dx.values[0], 1.0);

        let odd = Batch::new(1, 3, 5, 1, (0..15).map(|v| v as f64).collect()).unwrap();
        let (y, _) = maxpool2_forward(&odd);
        assert_eq!((y.h, y.w), (2, 3));
        assert_eq!(y.values, vec![6.0, 8.0, 9.0, 11.0, 13.0, 14.0]);
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut rng = stream(11, &[]);
        let mut vals: Vec<f64> = (0..2 * 5 * 6 * 2).map(|i| i as f64 * 0.1).collect();
        rand::seq::SliceRandom::shuffle(vals.as_mut_slice(), &mut rng);
        let x = Batch::new(2, 5, 6, 2, vals).unwrap();
        let (y, arg) = maxpool2_forward(&x);
        let r = random_vec(12, y.values.len());
        let dx = maxpool2_backward(x.dims(), &arg, &Batch { values: r.clone(), ..y });
        for i in 0..x.values.len() {
            let h = 1e-4;
            let mut p = x.values.clone();
            p[i] += h;
            let fp = dot(&maxpool2_forward(&x.with_values(p.clone())).0.values, &r);
            p[i] -= 2.0 * h;
            let fm = dot(&maxpool2_forward(&x.with_values(p)).0.values, &r);
            assert_close(dx.values[i], (fp - fm) / (2.0 * h), 1e-4, "maxpool");
        }
    }

    #[test]
    fn dense_and_gap_gradients() {
        let x = random_batch(13, 3, 2, 2, 3);
        let gap = global_avg_pool_forward(&x);
        let r = random_vec(14, gap.values.len());
        let dx = global_avg_pool_backward(x.dims(), &Batch { values: r.clone(), ..gap });
        for i in 0..x.values.len() {
            let num = central(&x.values, i, |v| dot(&global_avg_pool_forward(&x.with_values(v.to_vec())).values, &r));
            assert_close(dx.values[i], num, 1e-6, "gap");
        }

        let (inp, out) = (12, 4);
        let w = random_vec(15, inp * out);
        let b = random_vec(16, out);
        let r = random_vec(17, 3 * out);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; out];
        let dy = Batch::new(3, 1, 1, out, r.clone()).unwrap();
        let dx = dense_backward(&x, inp, out, &w, &dy, &mut dw, &mut db).unwrap();
        let f = |xv: &[f64], wv: &[f64], bv: &[f64]| {
            dot(&dense_forward(&x.with_values(xv.to_vec()), inp, out, wv, bv).unwrap().values, &r)
        };
        for i in 0..x.values.len() {
            assert_close(dx.values[i], central(&x.values, i, |v| f(v, &w, &b)), 1e-6, "dense dx");
        }
        for i in 0..w.len() {
            assert_close(dw[i], central(&w, i, |v| f(&x.values, v, &b)), 1e-6, "dense dw");
        }
        for i in 0..out {
            assert_close(db[i], central(&b, i, |v| f(&x.values, &w, v)), 1e-6, "dense db");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let logits = Batch::new(2, 1, 1, 4, vec![0.3; 8]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);

        let confident = Batch::new(1, 1, 1, 3, vec![0.0, 800.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&confident, &[1]).unwrap();
        assert!(loss.abs() < 1e-12);

        assert!(softmax_cross_entropy(&logits, &[0, 4]).is_err());

        let x = random_batch(18, 3, 1, 1, 5).map(|v| 3.0 * v);
        let labels = [4, 0, 2];
        let (_, g) = softmax_cross_entropy(&x, &labels).unwrap();
        for i in 0..x.values.len() {
            let num = central(&x.values, i, |v| softmax_cross_entropy(&x.with_values(v.to_vec()), &labels).unwrap().0);
            assert_close(g.values[i], num, 1e-6, "softmax ce");
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = random_vec(19, 12);
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
        let a = softmax_rows(&z, 4);
        let b = softmax_rows(&shifted, 4);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12);
        }
        for row in a.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
