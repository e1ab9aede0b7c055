use super::adam::{adam_update, AdamHyper};
use super::layers::{backward_all, forward_all, infer_all, BatchNormLayer, Layer};
use super::ops::{softmax_cross_entropy, softmax_rows};
use super::{layout_output_shape, ArchConfig, Batch, LayerSpec, Mode, Param, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Network {
    input: Shape,
    layout: Vec<LayerSpec>,
    arch: Option<ArchConfig>,
    pub(crate) layers: Vec<Layer>,
    last_mode: Option<Mode>,
    /// Adam update counter `t`.
    pub(crate) updates: u64,
}

impl Network {
    /// Instantiates a validated layout with He-normal weights drawn from `seed`.
    pub fn from_layout(input: Shape, layout: Vec<LayerSpec>, arch: Option<ArchConfig>, seed: u64) -> Result<Self> {
        let out = layout_output_shape(&layout, input)?;
        if out.0 != 1 || out.1 != 1 || out.2 < 1 {
            return Err(Error::Shape(format!("network must end in a class vector, ends at {out:?}")));
        }
        let mut counter = 0;
        let layers = layout.iter().map(|s| Layer::build(s, seed, &mut counter)).collect();
        Ok(Self {
            input,
            layout,
            arch,
            layers,
            last_mode: None,
            updates: 0,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn arch(&self) -> Option<&ArchConfig> {
        self.arch.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        layout_output_shape(&self.layout, self.input).map(|s| s.2).unwrap_or(0)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Convolutions counted on the instantiated layers.
    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().map(Layer::conv_layers).sum()
    }

    /// Trainable scalars counted on the instantiated layers.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    fn check_input(&self, x: &Batch) -> Result<()> {
        if (x.h, x.w, x.c) != self.input {
            return Err(Error::Shape(format!(
                "network expects {:?} samples, got {:?}",
                self.input,
                (x.h, x.w, x.c)
            )));
        }
        if x.n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(())
    }

    /// Pre-softmax class scores; caches activations for [`Network::backward`].
    pub fn forward_logits(&mut self, x: &Batch, mode: Mode) -> Result<Batch> {
        self.check_input(x)?;
        self.last_mode = Some(mode);
        forward_all(&mut self.layers, x.clone(), mode)
    }

    /// Class probabilities, caching activations.
    pub fn forward(&mut self, x: &Batch, mode: Mode) -> Result<Batch> {
        let logits = self.forward_logits(x, mode)?;
        Ok(logits.with_values(softmax_rows(&logits.values, logits.c)))
    }

    /// Accumulates parameter gradients for the scores' gradient `dlogits`
    /// and returns the gradient with respect to the network input if requested.
    pub fn backward(&mut self, dlogits: &Batch, need_input_grad: bool) -> Result<Option<Batch>> {
        let mode = self
            .last_mode
            .ok_or_else(|| Error::InvalidArgument("backward called before forward".into()))?;
        backward_all(&mut self.layers, dlogits.clone(), mode, need_input_grad)
    }

    /// Inference-mode scores without caching.
    pub fn infer_logits(&self, x: &Batch) -> Result<Batch> {
        self.check_input(x)?;
        infer_all(&self.layers, x)
    }

    pub fn predict_proba(&self, x: &Batch) -> Result<Batch> {
        let logits = self.infer_logits(x)?;
        Ok(logits.with_values(softmax_rows(&logits.values, logits.c)))
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    /// One optimiser update using the accumulated gradients.
    pub fn adam_step(&mut self, hyper: &AdamHyper) {
        self.updates += 1;
        let t = self.updates;
        self.visit_params_mut(&mut |p| adam_update(p, hyper, t));
    }

    /// Training-mode forward, cross-entropy, backward and one Adam update.
    /// Returns the batch loss and the number of samples whose arg-max score matched the label.
    pub fn train_batch(&mut self, x: &Batch, labels: &[usize], hyper: &AdamHyper) -> Result<(f64, usize)> {
        self.zero_grad();
        let logits = self.forward_logits(x, Mode::Train)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss {loss}")));
        }
        let correct = logits
            .values
            .chunks_exact(logits.c)
            .zip(labels)
            .filter(|(row, &l)| crate::metrics::ranked_classes(row)[0] == l)
            .count();
        self.backward(&dlogits, false)?;
        self.adam_step(hyper);
        Ok((loss, correct))
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }

    pub(crate) fn visit_batchnorm<'a>(&'a self, f: &mut dyn FnMut(&'a BatchNormLayer)) {
        self.layers.iter().for_each(|l| l.visit_batchnorm(f));
    }

    pub(crate) fn visit_batchnorm_mut(&mut self, f: &mut dyn FnMut(&mut BatchNormLayer)) {
        self.layers.iter_mut().for_each(|l| l.visit_batchnorm_mut(f));
    }

    /// All trainable values concatenated in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.grad));
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let total = self.parameter_count();
        if values.len() != total {
            return Err(Error::Shape(format!("{} values for {total} parameters", values.len())));
        }
        let mut off = 0;
        self.visit_params_mut(&mut |p| {
            let n = p.len();
            p.value.copy_from_slice(&values[off..off + n]);
            off += n;
        });
        Ok(())
    }

    /// Batch-norm running means and variances, layer by layer.
    pub fn running_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_batchnorm(&mut |bn| out.push((bn.running_mean.clone(), bn.running_var.clone())));
        out
    }

    /// Drops cached activations (they are rebuilt by the next forward pass).
    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
        self.last_mode = None;
    }

    /// Weights of the first convolution or dense layer in depth-first order.
    #[cfg(test)]
    pub(crate) fn first_weights_mut(&mut self) -> Option<&mut Param> {
        fn find(layers: &mut [Layer]) -> Option<&mut Param> {
            for l in layers {
                match l {
                    Layer::Conv { w, .. } => return Some(w),
                    Layer::Dense { w, .. } => return Some(w),
                    Layer::Residual { branch, .. } => {
                        if let Some(p) = find(branch) {
                            return Some(p);
                        }
                    }
                    _ => {}
                }
            }
            None
        }
        find(&mut self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ops::ConvShape;
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_batch(seed: u64, n: usize, h: usize, w: usize, c: usize) -> Batch {
        let mut rng = stream(seed, &[]);
        Batch::new(n, h, w, c, (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_branch_residual_is_identity_or_projection() {
        let k = |cin, cout| ConvShape { kh: 3, kw: 3, cin, cout };
        for (cin, cout) in [(3, 3), (3, 5)] {
            let projection = (cin != cout).then_some(ConvShape { kh: 1, kw: 1, cin, cout });
            let layout = vec![
                LayerSpec::Residual {
                    branch: vec![LayerSpec::Swish, LayerSpec::Conv(k(cin, cout)), LayerSpec::Swish, LayerSpec::Conv(k(cout, cout))],
                    projection,
                },
                LayerSpec::GlobalAvgPool,
            ];
            let mut net = Network::from_layout((4, 5, cin), layout, None, 3).unwrap();
            if let Layer::Residual { branch, .. } = &mut net.layers[0] {
                for l in branch.iter_mut() {
                    l.visit_params_mut(&mut |p| p.value.iter_mut().for_each(|v| *v = 0.0));
                }
            }
            let x = random_batch(1, 2, 4, 5, cin);
            let block_out = net.layers[0].infer(&x).unwrap();
            let expected = match &net.layers[0] {
                Layer::Residual { projection: Some(p), .. } => p.infer(&x).unwrap(),
                _ => x.clone(),
            };
            assert_eq!(block_out, expected);
        }
    }

    /// Max relative error between backprop and central differences over every parameter.
    pub(crate) fn whole_network_gradient_error(net: &mut Network, x: &Batch, labels: &[usize]) -> f64 {
        net.zero_grad();
        let logits = net.forward_logits(x, Mode::Train).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, labels).unwrap();
        net.backward(&d, false).unwrap();
        let analytic = net.flat_grads();
        let base = net.flat_params();
        let loss_at = |p: &[f64], net: &mut Network| {
            net.set_flat_params(p).unwrap();
            let z = net.forward_logits(x, Mode::Train).unwrap();
            softmax_cross_entropy(&z, labels).unwrap().0
        };
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let h = 1e-5 * (1.0 + base[i].abs());
            let mut p = base.clone();
            p[i] += h;
            let fp = loss_at(&p, net);
            p[i] -= 2.0 * h;
            let fm = loss_at(&p, net);
            let numeric = (fp - fm) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        net.set_flat_params(&base).unwrap();
        worst
    }

    #[test]
    fn whole_network_gradients_match_finite_differences() {
        use super::super::{build_network, ArchConfig, Family};
        for family in Family::ALL {
            let mut cfg = ArchConfig::desk(family, [8, 12, 3], 2);
            cfg.stem_kernel = 3;
            let mut net = build_network(&cfg, 21).unwrap();
            let x = random_batch(22, 2, 8, 12, 3);
            let err = whole_network_gradient_error(&mut net, &x, &[0, 1]);
            assert!(err < 1e-3, "{family}: {err}");
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_inference_ignores_batch_order() {
        use super::super::{build_network, AdamHyper, ArchConfig, Family};
        let cfg = ArchConfig::desk(Family::ResnetB, [8, 12, 3], 3);
        let mut net = build_network(&cfg, 4).unwrap();
        let x = random_batch(5, 4, 8, 12, 3).map(|v| 10.0 * v);
        for row in net.forward(&x, Mode::Train).unwrap().values.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        net.train_batch(&x, &[0, 1, 2, 0], &AdamHyper::default()).unwrap();
        let p = net.predict_proba(&x).unwrap();
        for row in p.values.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let order = [2, 0, 3, 1];
        let permuted = net.predict_proba(&x.select(&order)).unwrap();
        for (k, &i) in order.iter().enumerate() {
            assert_eq!(permuted.sample(k), p.sample(i));
        }
        let single = net.predict_proba(&x.select(&[1])).unwrap();
        assert_eq!(single.sample(0), p.sample(1));
        let cached = net.forward(&x, Mode::Infer).unwrap();
        assert_eq!(cached, p);
    }

    #[test]
    fn inference_before_training_is_rejected() {
        let layout = vec![LayerSpec::BatchNorm { channels: 2 }, LayerSpec::GlobalAvgPool];
        let mut net = Network::from_layout((3, 3, 2), layout, None, 0).unwrap();
        let x = random_batch(2, 2, 3, 3, 2);
        assert!(net.predict_proba(&x).is_err());
        net.forward(&x, Mode::Train).unwrap();
        assert!(net.predict_proba(&x).is_ok());
    }

    #[test]
    fn layout_must_end_in_a_vector() {
        let layout = vec![LayerSpec::Swish];
        assert!(Network::from_layout((3, 3, 2), layout, None, 0).is_err());
        let bad = vec![LayerSpec::Conv(ConvShape { kh: 3, kw: 3, cin: 4, cout: 2 }), LayerSpec::GlobalAvgPool];
        assert!(Network::from_layout((3, 3, 2), bad, None, 0).is_err());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let layout = vec![LayerSpec::GlobalAvgPool];
        let net = Network::from_layout((3, 3, 2), layout, None, 0).unwrap();
        assert!(net.infer_logits(&random_batch(0, 1, 3, 4, 2)).is_err());
    }
}
