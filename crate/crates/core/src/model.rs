//! Truncated stick-breaking DP-DLGMM generative process.
//!
//! Cluster `t` owns a stack of `L` Gaussian latent layers. Layer indices are
//! 1-based in the mathematical description and stored 0-based here:
//! `h[0]` is the bottom layer `h^(1)`, `h[L - 1]` the top layer `h^(L)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    sigmoid, softplus, softplus_sq_var, softplus_sq_var_grad, GaussianHead, HeadCache, Mlp,
    MlpCache, Parameterized,
};
use crate::rng::std_normal;
use crate::scalar::floor_var;
use crate::special::log_pdf_unchecked;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionKind {
    Bernoulli,
    Gaussian,
}

/// Emission network `f_{W^(0)}`: logits for Bernoulli data, a Gaussian head otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission<F> {
    Bernoulli(Mlp<F>),
    Gaussian(GaussianHead<F>),
}

#[derive(Debug, Clone)]
pub enum EmissionCache<F> {
    Bernoulli(MlpCache<F>),
    Gaussian(HeadCache<F>),
}

impl<F: Scalar> Emission<F> {
    pub fn kind(&self) -> EmissionKind {
        match self {
            Emission::Bernoulli(_) => EmissionKind::Bernoulli,
            Emission::Gaussian(_) => EmissionKind::Gaussian,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Emission::Bernoulli(m) => m.in_dim(),
            Emission::Gaussian(h) => h.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Emission::Bernoulli(m) => m.out_dim(),
            Emission::Gaussian(h) => h.out_dim(),
        }
    }

    pub fn new_cache(&self) -> EmissionCache<F> {
        match self {
            Emission::Bernoulli(_) => EmissionCache::Bernoulli(MlpCache::default()),
            Emission::Gaussian(_) => EmissionCache::Gaussian(HeadCache::default()),
        }
    }

    /// `ln p_X(x | f(h1))`, leaving the activations in `cache`.
    pub fn log_prob_cached(&self, h1: &[F], x: &[F], cache: &mut EmissionCache<F>) -> Result<F> {
        if x.len() != self.out_dim() {
            return Err(Error::dim("emission data", self.out_dim(), x.len()));
        }
        match (self, cache) {
            (Emission::Bernoulli(net), EmissionCache::Bernoulli(c)) => {
                net.forward_cached(h1, c)?;
                Ok(bernoulli_log_prob(x, c.output()))
            }
            (Emission::Gaussian(head), EmissionCache::Gaussian(c)) => {
                head.forward_cached(h1, c)?;
                Ok(log_pdf_unchecked(x, c.mean(), c.var()))
            }
            _ => Err(Error::Cache("emission cache kind mismatch".into())),
        }
    }

    pub fn log_prob(&self, h1: &[F], x: &[F]) -> Result<F> {
        let mut cache = self.new_cache();
        self.log_prob_cached(h1, x, &mut cache)
    }

    /// Backpropagates `scale * d ln p_X / d(params, h1)`; returns the `h1` gradient.
    pub fn backward_acc(
        &self,
        cache: &EmissionCache<F>,
        x: &[F],
        scale: F,
        grads: &mut [Vec<F>],
    ) -> Result<Vec<F>> {
        match (self, cache) {
            (Emission::Bernoulli(net), EmissionCache::Bernoulli(c)) => {
                let g: Vec<F> = x
                    .iter()
                    .zip(c.output())
                    .map(|(&xv, &l)| scale * (xv - sigmoid(l)))
                    .collect();
                net.backward_acc(c, &g, grads)
            }
            (Emission::Gaussian(head), EmissionCache::Gaussian(c)) => {
                let half = F::lit(0.5);
                let mut gm = Vec::with_capacity(x.len());
                let mut gv = Vec::with_capacity(x.len());
                for j in 0..x.len() {
                    let v = c.var()[j];
                    let r = x[j] - c.mean()[j];
                    gm.push(scale * r / v);
                    gv.push(scale * (-half / v + half * r * r / (v * v)));
                }
                head.backward_acc(c, &gm, &gv, grads)
            }
            _ => Err(Error::Cache("emission cache kind mismatch".into())),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, h1: &[F], rng: &mut R) -> Result<Vec<F>> {
        match self {
            Emission::Bernoulli(net) => {
                let (logits, _) = net.forward(h1)?;
                Ok(logits
                    .iter()
                    .map(|&l| {
                        let u: f64 = rng.random();
                        if F::lit(u) < sigmoid(l) {
                            F::one()
                        } else {
                            F::zero()
                        }
                    })
                    .collect())
            }
            Emission::Gaussian(head) => {
                let mut cache = HeadCache::default();
                head.forward_cached(h1, &mut cache)?;
                Ok(cache
                    .mean()
                    .iter()
                    .zip(cache.var())
                    .map(|(&m, &v)| m + v.sqrt() * std_normal::<F, _>(rng))
                    .collect())
            }
        }
    }

    /// Mean of the emission distribution at `h1`.
    pub fn mean(&self, h1: &[F]) -> Result<Vec<F>> {
        match self {
            Emission::Bernoulli(net) => Ok(net.forward(h1)?.0.into_iter().map(sigmoid).collect()),
            Emission::Gaussian(head) => Ok(head.head_forward(h1)?.0.into_parts().0),
        }
    }

    fn as_params(&self) -> &dyn Parameterized<F> {
        match self {
            Emission::Bernoulli(m) => m,
            Emission::Gaussian(h) => h,
        }
    }

    fn as_params_mut(&mut self) -> &mut dyn Parameterized<F> {
        match self {
            Emission::Bernoulli(m) => m,
            Emission::Gaussian(h) => h,
        }
    }
}

/// `Σ x ln σ(l) + (1 - x) ln(1 - σ(l)) = Σ x l - softplus(l)`.
pub fn bernoulli_log_prob<F: Scalar>(x: &[F], logits: &[F]) -> F {
    x.iter().zip(logits).map(|(&xv, &l)| xv * l - softplus(l)).sum()
}

/// Parameters of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams<F> {
    /// `m_t^(L)`, updated in closed form.
    pub top_mean: Vec<F>,
    /// Diagonal of `V_t^(L)`, updated in closed form.
    pub top_var: Vec<F>,
    /// `layer_maps[l]` maps `h[l + 1]` to the mean of `h[l]`.
    layer_maps: Vec<Mlp<F>>,
    /// Unconstrained noise parameters; the layer variance is `softplus(raw)^2`.
    noise_raw: Vec<Vec<F>>,
    emission: Emission<F>,
}

impl<F: Scalar> ClusterParams<F> {
    pub fn new(
        top_mean: Vec<F>,
        top_var: Vec<F>,
        layer_maps: Vec<Mlp<F>>,
        noise_raw: Vec<Vec<F>>,
        emission: Emission<F>,
    ) -> Result<Self> {
        let c = ClusterParams {
            top_mean,
            top_var,
            layer_maps,
            noise_raw,
            emission,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.top_var.len() != self.top_mean.len() {
            return Err(Error::dim("top variance", self.top_mean.len(), self.top_var.len()));
        }
        if let Some(v) = self.top_var.iter().find(|v| !(**v > F::zero())) {
            return Err(Error::Domain {
                func: "ClusterParams",
                value: v.to_f64_lossy(),
                expected: "top variance > 0",
            });
        }
        if self.noise_raw.len() != self.layer_maps.len() {
            return Err(Error::dim("noise layers", self.layer_maps.len(), self.noise_raw.len()));
        }
        let depth = self.layer_maps.len() + 1;
        for l in 0..depth - 1 {
            let map = &self.layer_maps[l];
            if map.in_dim() != dims[l + 2] || map.out_dim() != dims[l + 1] {
                return Err(Error::dim("layer map", dims[l + 1], map.out_dim()));
            }
            if self.noise_raw[l].len() != dims[l + 1] {
                return Err(Error::dim("noise scale", dims[l + 1], self.noise_raw[l].len()));
            }
        }
        if self.emission.in_dim() != dims[1] {
            return Err(Error::dim("emission input", dims[1], self.emission.in_dim()));
        }
        Ok(())
    }

    /// `[p_0, p_1, ..., p_L]`, derived from the networks.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.emission.out_dim()];
        for map in &self.layer_maps {
            dims.push(map.out_dim());
        }
        dims.push(self.top_mean.len());
        dims
    }

    pub fn depth(&self) -> usize {
        self.layer_maps.len() + 1
    }

    pub fn layer_maps(&self) -> &[Mlp<F>] {
        &self.layer_maps
    }

    pub fn layer_maps_mut(&mut self) -> &mut [Mlp<F>] {
        &mut self.layer_maps
    }

    pub fn noise_raw(&self) -> &[Vec<F>] {
        &self.noise_raw
    }

    pub fn noise_raw_mut(&mut self) -> &mut [Vec<F>] {
        &mut self.noise_raw
    }

    /// Noise variances `s^(l)^2` of layer `l` (0-based, `l < L - 1`).
    pub fn noise_var(&self, l: usize) -> Vec<F> {
        self.noise_raw[l].iter().map(|&r| softplus_sq_var(r)).collect()
    }

    pub fn emission(&self) -> &Emission<F> {
        &self.emission
    }

    pub fn emission_mut(&mut self) -> &mut Emission<F> {
        &mut self.emission
    }

    /// Gradient helper: `d var / d raw` for the noise of layer `l`.
    pub(crate) fn noise_var_grad(&self, l: usize) -> Vec<F> {
        self.noise_raw[l].iter().map(|&r| softplus_sq_var_grad(r)).collect()
    }

    /// Number of gradient tensors belonging to the layer maps.
    pub(crate) fn map_tensor_count(&self) -> usize {
        self.layer_maps.iter().map(|m| m.num_tensors()).sum()
    }
}

/// Gradient-trained parameters: layer maps, noise scales `s^(1:L-1)`, emission.
/// The closed-form `top_mean` / `top_var` are not included.
impl<F: Scalar> Parameterized<F> for ClusterParams<F> {
    fn tensors(&self) -> Vec<&[F]> {
        let mut t: Vec<&[F]> = self.layer_maps.iter().flat_map(|m| m.tensors()).collect();
        t.extend(self.noise_raw.iter().map(Vec::as_slice));
        t.extend(self.emission.as_params().tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut t: Vec<&mut [F]> = self.layer_maps.iter_mut().flat_map(|m| m.tensors_mut()).collect();
        t.extend(self.noise_raw.iter_mut().map(Vec::as_mut_slice));
        t.extend(self.emission.as_params_mut().tensors_mut());
        t
    }
}

/// Architecture shared by the generative and recognition networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// Latent widths bottom-up: `[p_1, ..., p_L]`.
    pub latent_dims: Vec<usize>,
    /// Hidden widths of every network.
    pub hidden: Vec<usize>,
    pub emission: EmissionKind,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            latent_dims: vec![2],
            hidden: vec![64],
            emission: EmissionKind::Gaussian,
        }
    }
}

impl Architecture {
    pub fn depth(&self) -> usize {
        self.latent_dims.len()
    }

    /// `[p_0, p_1, ..., p_L]`.
    pub fn dims(&self, data_dim: usize) -> Vec<usize> {
        let mut d = vec![data_dim];
        d.extend(&self.latent_dims);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dims.is_empty() || self.latent_dims.contains(&0) {
            return Err(Error::Config("latent layer widths must be non-empty and positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// `Θ` truncated to `T` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeParams<F> {
    emission_kind: EmissionKind,
    dims: Vec<usize>,
    clusters: Vec<ClusterParams<F>>,
}

/// Initial noise scale of the intermediate layers.
const INIT_NOISE_SCALE: f64 = 1.0;

impl<F: Scalar> GenerativeParams<F> {
    pub fn new(clusters: Vec<ClusterParams<F>>) -> Result<Self> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::Config("at least one cluster required".into()))?;
        let dims = first.dims();
        let kind = first.emission.kind();
        for c in &clusters {
            c.validate()?;
            if c.dims() != dims || c.emission.kind() != kind {
                return Err(Error::Config("clusters must share dimensions and emission kind".into()));
            }
        }
        Ok(GenerativeParams {
            emission_kind: kind,
            dims,
            clusters,
        })
    }

    /// Random networks, standard-normal top prior, unit noise scales.
    pub fn init<R: Rng + ?Sized>(
        data_dim: usize,
        arch: &Architecture,
        truncation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        if data_dim == 0 || truncation == 0 {
            return Err(Error::Config("data dimension and truncation must be positive".into()));
        }
        let dims = arch.dims(data_dim);
        let depth = arch.depth();
        // softplus(raw) = INIT_NOISE_SCALE
        let raw0 = F::lit(INIT_NOISE_SCALE.exp_m1().ln());
        let clusters = (0..truncation)
            .map(|_| {
                let layer_maps = (0..depth - 1)
                    .map(|l| Mlp::with_hidden(dims[l + 2], &arch.hidden, dims[l + 1], rng))
                    .collect();
                let noise_raw = (0..depth - 1).map(|l| vec![raw0; dims[l + 1]]).collect();
                let emission = match arch.emission {
                    EmissionKind::Bernoulli => {
                        Emission::Bernoulli(Mlp::with_hidden(dims[1], &arch.hidden, data_dim, rng))
                    }
                    EmissionKind::Gaussian => Emission::Gaussian(GaussianHead::with_hidden(
                        dims[1],
                        &arch.hidden,
                        data_dim,
                        rng,
                    )),
                };
                ClusterParams {
                    top_mean: vec![F::zero(); dims[depth]],
                    top_var: vec![F::one(); dims[depth]],
                    layer_maps,
                    noise_raw,
                    emission,
                }
            })
            .collect();
        Ok(GenerativeParams {
            emission_kind: arch.emission,
            dims,
            clusters,
        })
    }

    pub fn emission_kind(&self) -> EmissionKind {
        self.emission_kind
    }

    /// `[p_0, ..., p_L]`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn truncation(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[ClusterParams<F>] {
        &self.clusters
    }

    pub fn clusters_mut(&mut self) -> &mut [ClusterParams<F>] {
        &mut self.clusters
    }

    pub fn cluster(&self, t: usize) -> Result<&ClusterParams<F>> {
        self.clusters.get(t).ok_or(Error::Index {
            context: "cluster",
            index: t,
            len: self.clusters.len(),
        })
    }

    /// Sets `m_t^(L)`, `V_t^(L)`; variances are floored.
    pub fn set_top_prior(&mut self, t: usize, mean: Vec<F>, var: Vec<F>) -> Result<()> {
        let p = self.dims[self.depth()];
        if mean.len() != p || var.len() != p {
            return Err(Error::dim("top prior", p, mean.len()));
        }
        let len = self.clusters.len();
        let c = self.clusters.get_mut(t).ok_or(Error::Index {
            context: "set_top_prior",
            index: t,
            len,
        })?;
        c.top_mean = mean;
        c.top_var = var.into_iter().map(floor_var).collect();
        Ok(())
    }
}

/// Mixture weights `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct StickWeights<F> {
    pi: Vec<F>,
}

impl<F: Scalar> StickWeights<F> {
    pub fn as_slice(&self) -> &[F] {
        &self.pi
    }

    /// One-hot weights on cluster `t`.
    pub fn one_hot(truncation: usize, t: usize) -> Result<Self> {
        if t >= truncation {
            return Err(Error::Index {
                context: "StickWeights::one_hot",
                index: t,
                len: truncation,
            });
        }
        let mut pi = vec![F::zero(); truncation];
        pi[t] = F::one();
        Ok(StickWeights { pi })
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = F::lit(rng.random::<f64>());
        let mut acc = F::zero();
        for (t, &p) in self.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return t;
            }
        }
        // Rounding left u above the total mass: take the last non-empty stick.
        self.pi.iter().rposition(|&p| p > F::zero()).unwrap_or(0)
    }
}

/// `π_k = β_k ∏_{l<k} (1 - β_l)` for `β ∈ [0,1]^T` with `β_T = 1`.
pub fn stick_breaking<F: Scalar>(beta: &[F]) -> Result<StickWeights<F>> {
    let last = *beta
        .last()
        .ok_or_else(|| Error::Config("stick_breaking needs at least one stick".into()))?;
    if let Some(&b) = beta.iter().find(|&&b| !(b >= F::zero() && b <= F::one())) {
        return Err(Error::Domain {
            func: "stick_breaking",
            value: b.to_f64_lossy(),
            expected: "beta in [0, 1]",
        });
    }
    if last != F::one() {
        return Err(Error::Domain {
            func: "stick_breaking",
            value: last.to_f64_lossy(),
            expected: "final stick equal to 1",
        });
    }
    let mut remaining = F::one();
    let pi = beta
        .iter()
        .map(|&b| {
            let p = b * remaining;
            remaining *= F::one() - b;
            p
        })
        .collect();
    Ok(StickWeights { pi })
}

/// `T - 1` draws from `Beta(1, η)` by inversion, followed by the clamped stick `1`.
pub fn sample_prior_sticks<F: Scalar, R: Rng + ?Sized>(
    eta: F,
    truncation: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    if !(eta > F::zero()) || !eta.is_finite() {
        return Err(Error::Domain {
            func: "sample_prior_sticks",
            value: eta.to_f64_lossy(),
            expected: "eta > 0",
        });
    }
    if truncation == 0 {
        return Err(Error::Config("truncation must be at least 1".into()));
    }
    let mut beta: Vec<F> = (0..truncation - 1)
        .map(|_| {
            // 1 - U^(1/η), evaluated without cancellation.
            let u: f64 = rng.random::<f64>();
            let u = F::lit(u.max(f64::MIN_POSITIVE));
            -(u.ln() / eta).exp_m1()
        })
        .collect();
    beta.push(F::one());
    Ok(beta)
}

/// Output of ancestral sampling.
#[derive(Debug, Clone)]
pub struct GenerativeSample<F> {
    pub x: Vec<Vec<F>>,
    pub z: Vec<usize>,
    /// `h[n][l]` is layer `l + 1` of sample `n`.
    pub h: Vec<Vec<Vec<F>>>,
}

/// Draws one `(x, h)` from cluster `t`.
pub fn sample_cluster<F: Scalar, R: Rng + ?Sized>(
    theta: &GenerativeParams<F>,
    t: usize,
    rng: &mut R,
) -> Result<(Vec<F>, Vec<Vec<F>>)> {
    let c = theta.cluster(t)?;
    let depth = c.depth();
    let mut h = vec![Vec::new(); depth];
    h[depth - 1] = c
        .top_mean
        .iter()
        .zip(&c.top_var)
        .map(|(&m, &v)| m + v.sqrt() * std_normal::<F, _>(rng))
        .collect();
    for l in (0..depth - 1).rev() {
        let (f, _) = c.layer_maps[l].forward(&h[l + 1])?;
        let var = c.noise_var(l);
        h[l] = f
            .iter()
            .zip(&var)
            .map(|(&m, &v)| m + v.sqrt() * std_normal::<F, _>(rng))
            .collect();
    }
    let x = c.emission.sample(&h[0], rng)?;
    Ok((x, h))
}

/// Ancestral sampling of `n` points.
pub fn sample_generative<F: Scalar, R: Rng + ?Sized>(
    theta: &GenerativeParams<F>,
    pi: &StickWeights<F>,
    n: usize,
    rng: &mut R,
) -> Result<GenerativeSample<F>> {
    if pi.pi.len() != theta.truncation() {
        return Err(Error::dim("sample_generative weights", theta.truncation(), pi.pi.len()));
    }
    let mut out = GenerativeSample {
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let t = pi.sample_index(rng);
        let (x, h) = sample_cluster(theta, t, rng)?;
        out.x.push(x);
        out.z.push(t);
        out.h.push(h);
    }
    Ok(out)
}

/// The three factors of `ln p(x, h^(1:L) | z = t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTerms<F> {
    pub top: F,
    pub layers: F,
    pub emission: F,
}

impl<F: Scalar> JointTerms<F> {
    pub fn total(&self) -> F {
        self.top + self.layers + self.emission
    }
}

fn check_latents<F: Scalar>(theta: &GenerativeParams<F>, x: &[F], h: &[Vec<F>]) -> Result<()> {
    if x.len() != theta.data_dim() {
        return Err(Error::dim("joint_log_prob data", theta.data_dim(), x.len()));
    }
    if h.len() != theta.depth() {
        return Err(Error::dim("joint_log_prob layers", theta.depth(), h.len()));
    }
    for (l, layer) in h.iter().enumerate() {
        if layer.len() != theta.dims[l + 1] {
            return Err(Error::dim("joint_log_prob latent width", theta.dims[l + 1], layer.len()));
        }
    }
    Ok(())
}

pub fn joint_log_prob_terms<F: Scalar>(
    theta: &GenerativeParams<F>,
    x: &[F],
    h: &[Vec<F>],
    t: usize,
) -> Result<JointTerms<F>> {
    check_latents(theta, x, h)?;
    let c = theta.cluster(t)?;
    let depth = c.depth();
    let top = log_pdf_unchecked(&h[depth - 1], &c.top_mean, &c.top_var);
    let mut layers = F::zero();
    for l in 0..depth - 1 {
        let (f, _) = c.layer_maps[l].forward(&h[l + 1])?;
        layers += log_pdf_unchecked(&h[l], &f, &c.noise_var(l));
    }
    let emission = c.emission.log_prob(&h[0], x)?;
    Ok(JointTerms {
        top,
        layers,
        emission,
    })
}

/// `ln p(x, h^(1:L) | z = t)`.
pub fn joint_log_prob<F: Scalar>(
    theta: &GenerativeParams<F>,
    x: &[F],
    h: &[Vec<F>],
    t: usize,
) -> Result<F> {
    Ok(joint_log_prob_terms(theta, x, h, t)?.total())
}
