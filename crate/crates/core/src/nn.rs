//! Feed-forward networks with an explicit forward / backward contract.
//!
//! Gradients are stored in a [`GradBuffer`]: one flat array per parameter
//! tensor, in the order given by [`Parameterized::tensors`]. Backward passes
//! accumulate (`+=`) into the buffer so several contributions can share it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::floor_var;
use crate::special::DiagGaussian;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Identity => F::one(),
        }
    }
}

#[inline]
pub fn softplus<F: Scalar>(r: F) -> F {
    r.max(F::zero()) + (-r.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<F: Scalar>(r: F) -> F {
    if r >= F::zero() {
        F::one() / (F::one() + (-r).exp())
    } else {
        let e = r.exp();
        e / (F::one() + e)
    }
}

/// Variance `softplus(raw)^2` with the global floor.
#[inline]
pub fn softplus_sq_var<F: Scalar>(raw: F) -> F {
    let s = softplus(raw);
    floor_var(s * s)
}

/// `d var / d raw` for [`softplus_sq_var`]; zero where the floor is active.
#[inline]
pub fn softplus_sq_var_grad<F: Scalar>(raw: F) -> F {
    let s = softplus(raw);
    if s * s < F::lit(crate::scalar::VARIANCE_FLOOR) {
        F::zero()
    } else {
        F::lit(2.0) * s * sigmoid(raw)
    }
}

/// Congruent gradient storage for a [`Parameterized`] value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<F> {
    pub tensors: Vec<Vec<F>>,
}

impl<F: Scalar> GradBuffer<F> {
    pub fn zeros_like<P: Parameterized<F> + ?Sized>(params: &P) -> Self {
        GradBuffer {
            tensors: params.tensors().iter().map(|t| vec![F::zero(); t.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn is_congruent<P: Parameterized<F> + ?Sized>(&self, params: &P) -> bool {
        let tensors = params.tensors();
        tensors.len() == self.tensors.len()
            && tensors.iter().zip(&self.tensors).all(|(p, g)| p.len() == g.len())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// Value at a flat index across all tensors.
    pub fn flat(&self, index: usize) -> Option<F> {
        let mut i = index;
        for t in &self.tensors {
            if i < t.len() {
                return Some(t[i]);
            }
            i -= t.len();
        }
        None
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = F> + '_ {
        self.tensors.iter().flat_map(|t| t.iter().copied())
    }
}

/// Anything exposing trainable parameter tensors.
pub trait Parameterized<F: Scalar> {
    fn tensors(&self) -> Vec<&[F]>;
    fn tensors_mut(&mut self) -> Vec<&mut [F]>;

    fn num_tensors(&self) -> usize {
        self.tensors().len()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero_grad(&self) -> GradBuffer<F> {
        GradBuffer::zeros_like(self)
    }

    /// Mutable reference to the scalar at a flat index.
    fn flat_param_mut(&mut self, index: usize) -> Option<&mut F> {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                return Some(&mut t[i]);
            }
            i -= t.len();
        }
        None
    }
}

/// Gradient ascent: `params += alpha * grads`.
pub fn sgd_step<F: Scalar, P: Parameterized<F> + ?Sized>(
    params: &mut P,
    grads: &GradBuffer<F>,
    alpha: F,
) -> Result<()> {
    if !grads.is_congruent(params) {
        return Err(Error::dim("sgd_step", params.num_params(), grads.num_values()));
    }
    for (p, g) in params.tensors_mut().into_iter().zip(&grads.tensors) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv += alpha * *gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    /// Row-major `out_dim x in_dim`.
    weights: Vec<F>,
    bias: Vec<F>,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(
        weights: Vec<F>,
        bias: Vec<F>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::dim("DenseLayer weights", in_dim * out_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::dim("DenseLayer bias", out_dim, bias.len()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: vec![F::zero(); in_dim * out_dim],
            bias: vec![F::zero(); out_dim],
            in_dim,
            out_dim,
            activation,
        }
    }

    /// Fan-based uniform initialisation `U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim).max(1) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| F::lit(rng.random_range(-limit..=limit)))
            .collect();
        DenseLayer {
            weights,
            bias: vec![F::zero(); out_dim],
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn bias(&self) -> &[F] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [F] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [F] {
        &mut self.bias
    }

    fn forward_into(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let z = row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + *w * *v);
            out.push(self.activation.apply(z));
        }
    }

    /// Accumulates `dW`, `db` into `gw`, `gb` and returns `dL/dx`.
    fn backward_acc(&self, x: &[F], y: &[F], grad_y: &[F], gw: &mut [F], gb: &mut [F]) -> Vec<F> {
        let mut grad_x = vec![F::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let gz = grad_y[o] * self.activation.grad_from_output(y[o]);
            if gz == F::zero() {
                continue;
            }
            gb[o] += gz;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                gw[row + i] += gz * x[i];
                grad_x[i] += gz * self.weights[row + i];
            }
        }
        grad_x
    }
}

impl<F: Scalar> Parameterized<F> for DenseLayer<F> {
    fn tensors(&self) -> Vec<&[F]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// Chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<DenseLayer<F>>,
    in_dim: usize,
}

/// Activations recorded by a forward pass: `acts[0]` is the input, `acts[i + 1]`
/// the output of layer `i`.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<F> {
    acts: Vec<Vec<F>>,
}

impl<F: Scalar> MlpCache<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[F] {
        self.acts.first().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<F: Scalar> Mlp<F> {
    pub fn new(in_dim: usize, layers: Vec<DenseLayer<F>>) -> Result<Self> {
        let mut width = in_dim;
        for layer in &layers {
            if layer.in_dim != width {
                return Err(Error::dim("Mlp layer chain", width, layer.in_dim));
            }
            width = layer.out_dim;
        }
        Ok(Mlp { layers, in_dim })
    }

    /// Tanh hidden layers of the given widths followed by an identity output layer.
    pub fn with_hidden<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = in_dim;
        for &h in hidden {
            layers.push(DenseLayer::init_uniform(width, h, Activation::Tanh, rng));
            width = h;
        }
        layers.push(DenseLayer::init_uniform(width, out_dim, Activation::Identity, rng));
        Mlp { layers, in_dim }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, |l| l.out_dim)
    }

    pub fn layers(&self) -> &[DenseLayer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<F>] {
        &mut self.layers
    }

    pub fn forward(&self, x: &[F]) -> Result<(Vec<F>, MlpCache<F>)> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass reusing the buffers of `cache`; the output is `cache.output()`.
    pub fn forward_cached(&self, x: &[F], cache: &mut MlpCache<F>) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::dim("Mlp::forward input", self.in_dim, x.len()));
        }
        cache.acts.resize_with(self.layers.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.acts.split_at_mut(i + 1);
            layer.forward_into(&done[i], &mut rest[0]);
        }
        Ok(())
    }

    fn check_cache(&self, cache: &MlpCache<F>) -> Result<()> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::Cache(format!(
                "cache holds {} activations, network needs {}",
                cache.acts.len(),
                self.layers.len() + 1
            )));
        }
        if cache.acts[0].len() != self.in_dim {
            return Err(Error::Cache("cached input width differs from network input".into()));
        }
        for (layer, act) in self.layers.iter().zip(&cache.acts[1..]) {
            if act.len() != layer.out_dim {
                return Err(Error::Cache("cached activation width differs from layer".into()));
            }
        }
        Ok(())
    }

    /// Reverse-mode pass returning fresh parameter gradients and `dL/dx`.
    pub fn backward(&self, cache: &MlpCache<F>, grad_out: &[F]) -> Result<(GradBuffer<F>, Vec<F>)> {
        let mut grads = self.zero_grad();
        let grad_in = self.backward_acc(cache, grad_out, &mut grads.tensors)?;
        Ok((grads, grad_in))
    }

    /// Reverse-mode pass accumulating into `grads` (this network's tensors, in order).
    pub fn backward_acc(
        &self,
        cache: &MlpCache<F>,
        grad_out: &[F],
        grads: &mut [Vec<F>],
    ) -> Result<Vec<F>> {
        self.check_cache(cache)?;
        if grad_out.len() != self.out_dim() {
            return Err(Error::dim("Mlp::backward grad_out", self.out_dim(), grad_out.len()));
        }
        if grads.len() != 2 * self.layers.len() {
            return Err(Error::dim("Mlp::backward grads", 2 * self.layers.len(), grads.len()));
        }
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gw, gb) = grads[2 * i..2 * i + 2].split_at_mut(1);
            g = layer.backward_acc(&cache.acts[i], &cache.acts[i + 1], &g, &mut gw[0], &mut gb[0]);
        }
        Ok(g)
    }
}

impl<F: Scalar> Parameterized<F> for Mlp<F> {
    fn tensors(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }
}

/// Network emitting a diagonal Gaussian: a shared trunk, a mean layer and a
/// raw-variance layer mapped through `softplus(raw)^2` with the variance floor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead<F> {
    trunk: Mlp<F>,
    mean_out: DenseLayer<F>,
    raw_var_out: DenseLayer<F>,
}

#[derive(Debug, Clone, Default)]
pub struct HeadCache<F> {
    trunk: MlpCache<F>,
    mean: Vec<F>,
    raw_var: Vec<F>,
    var: Vec<F>,
}

impl<F: Scalar> HeadCache<F> {
    pub fn mean(&self) -> &[F] {
        &self.mean
    }

    pub fn var(&self) -> &[F] {
        &self.var
    }

    pub fn raw_var(&self) -> &[F] {
        &self.raw_var
    }
}

impl<F: Scalar> GaussianHead<F> {
    pub fn new(trunk: Mlp<F>, mean_out: DenseLayer<F>, raw_var_out: DenseLayer<F>) -> Result<Self> {
        for layer in [&mean_out, &raw_var_out] {
            if layer.in_dim != trunk.out_dim() {
                return Err(Error::dim("GaussianHead output layer", trunk.out_dim(), layer.in_dim));
            }
            if layer.activation != Activation::Identity {
                return Err(Error::Config("GaussianHead output layers must be Identity".into()));
            }
        }
        if mean_out.out_dim != raw_var_out.out_dim {
            return Err(Error::dim("GaussianHead variance layer", mean_out.out_dim, raw_var_out.out_dim));
        }
        Ok(GaussianHead {
            trunk,
            mean_out,
            raw_var_out,
        })
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = in_dim;
        for &h in hidden {
            layers.push(DenseLayer::init_uniform(width, h, Activation::Tanh, rng));
            width = h;
        }
        let trunk = Mlp { layers, in_dim };
        GaussianHead {
            trunk,
            mean_out: DenseLayer::init_uniform(width, out_dim, Activation::Identity, rng),
            raw_var_out: DenseLayer::init_uniform(width, out_dim, Activation::Identity, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mean_out.out_dim
    }

    pub fn trunk(&self) -> &Mlp<F> {
        &self.trunk
    }

    pub fn mean_layer(&self) -> &DenseLayer<F> {
        &self.mean_out
    }

    pub fn raw_var_layer(&self) -> &DenseLayer<F> {
        &self.raw_var_out
    }

    pub fn raw_var_layer_mut(&mut self) -> &mut DenseLayer<F> {
        &mut self.raw_var_out
    }

    pub fn mean_layer_mut(&mut self) -> &mut DenseLayer<F> {
        &mut self.mean_out
    }

    pub fn head_forward(&self, x: &[F]) -> Result<(DiagGaussian<F>, HeadCache<F>)> {
        let mut cache = HeadCache::default();
        self.forward_cached(x, &mut cache)?;
        let g = DiagGaussian::new(cache.mean.clone(), cache.var.clone())?;
        Ok((g, cache))
    }

    pub fn forward_cached(&self, x: &[F], cache: &mut HeadCache<F>) -> Result<()> {
        self.trunk.forward_cached(x, &mut cache.trunk)?;
        let features = cache.trunk.output();
        self.mean_out.forward_into(features, &mut cache.mean);
        self.raw_var_out.forward_into(features, &mut cache.raw_var);
        cache.var.clear();
        cache.var.extend(cache.raw_var.iter().map(|&r| softplus_sq_var(r)));
        Ok(())
    }

    pub fn backward(
        &self,
        cache: &HeadCache<F>,
        grad_mean: &[F],
        grad_var: &[F],
    ) -> Result<(GradBuffer<F>, Vec<F>)> {
        let mut grads = self.zero_grad();
        let grad_in = self.backward_acc(cache, grad_mean, grad_var, &mut grads.tensors)?;
        Ok((grads, grad_in))
    }

    /// Accumulates gradients for upstream `dL/dmean`, `dL/dvar`; returns `dL/dx`.
    pub fn backward_acc(
        &self,
        cache: &HeadCache<F>,
        grad_mean: &[F],
        grad_var: &[F],
        grads: &mut [Vec<F>],
    ) -> Result<Vec<F>> {
        let p = self.out_dim();
        if grad_mean.len() != p || grad_var.len() != p {
            return Err(Error::dim("GaussianHead::backward", p, grad_mean.len().min(grad_var.len())));
        }
        if cache.raw_var.len() != p || cache.mean.len() != p {
            return Err(Error::Cache("head cache width differs from head output".into()));
        }
        let n_trunk = self.trunk.num_tensors();
        if grads.len() != n_trunk + 4 {
            return Err(Error::dim("GaussianHead::backward grads", n_trunk + 4, grads.len()));
        }
        let features = cache.trunk.output();
        if features.len() != self.mean_out.in_dim {
            return Err(Error::Cache("head cache trunk width differs".into()));
        }
        let (trunk_grads, out_grads) = grads.split_at_mut(n_trunk);
        let (mean_g, var_g) = out_grads.split_at_mut(2);
        let (mw, mb) = mean_g.split_at_mut(1);
        let mut g_feat = self
            .mean_out
            .backward_acc(features, &cache.mean, grad_mean, &mut mw[0], &mut mb[0]);
        let grad_raw: Vec<F> = grad_var
            .iter()
            .zip(&cache.raw_var)
            .map(|(&g, &r)| g * softplus_sq_var_grad(r))
            .collect();
        let (vw, vb) = var_g.split_at_mut(1);
        let g2 = self
            .raw_var_out
            .backward_acc(features, &cache.raw_var, &grad_raw, &mut vw[0], &mut vb[0]);
        for (a, b) in g_feat.iter_mut().zip(g2) {
            *a += b;
        }
        self.trunk.backward_acc(&cache.trunk, &g_feat, trunk_grads)
    }
}

impl<F: Scalar> Parameterized<F> for GaussianHead<F> {
    fn tensors(&self) -> Vec<&[F]> {
        let mut t = self.trunk.tensors();
        t.extend(self.mean_out.tensors());
        t.extend(self.raw_var_out.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut t = self.trunk.tensors_mut();
        t.extend(self.mean_out.tensors_mut());
        t.extend(self.raw_var_out.tensors_mut());
        t
    }

    fn num_tensors(&self) -> usize {
        self.trunk.num_tensors() + 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn identity_layer(n: usize) -> DenseLayer<f64> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        DenseLayer::new(w, vec![0.0; n], n, n, Activation::Identity).unwrap()
    }

    #[test]
    fn identity_forward_and_backward() {
        let net = Mlp::new(3, vec![identity_layer(3)]).unwrap();
        let x = [0.5, -1.0, 2.0];
        let (y, cache) = net.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
        let (_, grad_in) = net.backward(&cache, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(grad_in, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn linear_backward_is_transpose() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let layer = DenseLayer::new(w, vec![0.1, -0.2], 3, 2, Activation::Identity).unwrap();
        let net = Mlp::new(3, vec![layer]).unwrap();
        let (_, cache) = net.forward(&[1.0, 1.0, 1.0]).unwrap();
        let (_, grad_in) = net.backward(&cache, &[1.0, -1.0]).unwrap();
        assert_eq!(grad_in, vec![1.0 - 4.0, 2.0 - 5.0, 3.0 - 6.0]);
    }

    #[test]
    fn zero_tanh_layer_outputs_zero() {
        let layer = DenseLayer::<f64>::zeros(4, 2, Activation::Tanh);
        let net = Mlp::new(4, vec![layer]).unwrap();
        let (y, _) = net.forward(&[1.0, -3.0, 2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = seeded(1);
        let net = Mlp::<f64>::with_hidden(3, &[5], 2, &mut rng);
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (grads, grad_in) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.iter_flat().all(|g| g == 0.0));
        assert!(grad_in.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn dimension_and_cache_errors() {
        let mut rng = seeded(2);
        let net = Mlp::<f64>::with_hidden(3, &[4], 2, &mut rng);
        assert!(net.forward(&[1.0, 2.0]).is_err());
        let other = Mlp::<f64>::with_hidden(3, &[6], 2, &mut rng);
        let (_, cache) = other.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::Cache(_))));
        assert!(Mlp::new(3, vec![DenseLayer::<f64>::zeros(4, 2, Activation::Tanh)]).is_err());
    }

    #[test]
    fn head_variance_at_zero_and_floor() {
        let trunk = Mlp::new(2, vec![]).unwrap();
        let head = GaussianHead::new(
            trunk,
            DenseLayer::<f64>::zeros(2, 3, Activation::Identity),
            DenseLayer::zeros(2, 3, Activation::Identity),
        )
        .unwrap();
        let (g, _) = head.head_forward(&[0.3, 0.7]).unwrap();
        let ln2sq = 2.0_f64.ln().powi(2);
        for v in g.var() {
            assert!((v - ln2sq).abs() < 1e-15);
        }
        let mut low = head.clone();
        low.raw_var_layer_mut().bias_mut().iter_mut().for_each(|b| *b = -1e4);
        let (g, _) = low.head_forward(&[0.3, 0.7]).unwrap();
        assert!(g.var().iter().all(|&v| v == 1e-6));
    }

    #[test]
    fn sgd_step_examples() {
        let mut layer = DenseLayer::new(vec![1.0f64], vec![0.0], 1, 1, Activation::Identity).unwrap();
        let mut grads = layer.zero_grad();
        grads.tensors[0][0] = 2.0;
        sgd_step(&mut layer, &grads, 0.1).unwrap();
        assert!((layer.weights()[0] - 1.2).abs() < 1e-15);
        let before = layer.clone();
        sgd_step(&mut layer, &grads, 0.0).unwrap();
        assert_eq!(layer, before);
        let zero = layer.zero_grad();
        sgd_step(&mut layer, &zero, 0.5).unwrap();
        assert_eq!(layer, before);
        let wrong = GradBuffer { tensors: vec![vec![0.0; 2]] };
        assert!(sgd_step(&mut layer, &wrong, 0.1).is_err());
    }
}
