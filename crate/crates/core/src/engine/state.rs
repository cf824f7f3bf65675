use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::nn::{GaussianHead, Parameterized};
use crate::Scalar;

use super::closed_form::SufficientStats;

/// Truncated beta posteriors `q(β_t) = Beta(γ_{1,t}, γ_{2,t})` for `t < T`;
/// the last stick is clamped to one and carries no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StickPosterior<F> {
    gamma1: Vec<F>,
    gamma2: Vec<F>,
}

impl<F: Scalar> StickPosterior<F> {
    pub fn new(gamma1: Vec<F>, gamma2: Vec<F>) -> Result<Self> {
        if gamma1.len() != gamma2.len() {
            return Err(Error::dim("StickPosterior", gamma1.len(), gamma2.len()));
        }
        if let Some(v) = gamma1.iter().chain(&gamma2).find(|v| !(**v > F::zero()) || !v.is_finite()) {
            return Err(Error::Domain {
                func: "StickPosterior::new",
                value: v.to_f64_lossy(),
                expected: "gamma > 0",
            });
        }
        Ok(StickPosterior { gamma1, gamma2 })
    }

    /// The prior `Beta(1, η)` on every free stick.
    pub fn prior(truncation: usize, eta: F) -> Self {
        let free = truncation.saturating_sub(1);
        StickPosterior {
            gamma1: vec![F::one(); free],
            gamma2: vec![eta; free],
        }
    }

    pub fn truncation(&self) -> usize {
        self.gamma1.len() + 1
    }

    pub fn gamma1(&self) -> &[F] {
        &self.gamma1
    }

    pub fn gamma2(&self) -> &[F] {
        &self.gamma2
    }
}

/// Row-stochastic `N x T` matrix `φ`; labelled rows are clamped one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities<F> {
    phi: Vec<F>,
    rows: usize,
    truncation: usize,
    labels: Vec<Option<usize>>,
}

impl<F: Scalar> Responsibilities<F> {
    pub fn uniform(rows: usize, truncation: usize) -> Self {
        let w = F::one() / F::from_usize_lossy(truncation);
        Responsibilities {
            phi: vec![w; rows * truncation],
            rows,
            truncation,
            labels: vec![None; rows],
        }
    }

    /// Builds from explicit rows, normalising nothing; rows must already sum to one.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let truncation = rows.first().map_or(0, Vec::len);
        let mut phi = Vec::with_capacity(rows.len() * truncation);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != truncation {
                return Err(Error::dim("Responsibilities row", truncation, row.len()));
            }
            check_row(n, row)?;
            phi.extend_from_slice(row);
        }
        Ok(Responsibilities {
            phi,
            rows: rows.len(),
            truncation,
            labels: vec![None; rows.len()],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn row(&self, n: usize) -> &[F] {
        &self.phi[n * self.truncation..(n + 1) * self.truncation]
    }

    pub fn get(&self, n: usize, t: usize) -> F {
        self.phi[n * self.truncation + t]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn is_clamped(&self, n: usize) -> bool {
        self.labels[n].is_some()
    }

    pub fn num_clamped(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Clamps labelled rows one-hot on their label; `None` rows stay free.
    pub fn clamp(&mut self, labels: &[Option<usize>]) -> Result<()> {
        if labels.len() != self.rows {
            return Err(Error::dim("Responsibilities::clamp", self.rows, labels.len()));
        }
        for (n, label) in labels.iter().enumerate() {
            if let Some(y) = *label {
                if y >= self.truncation {
                    return Err(Error::Index {
                        context: "label",
                        index: y,
                        len: self.truncation,
                    });
                }
                let row = &mut self.phi[n * self.truncation..(n + 1) * self.truncation];
                row.iter_mut().for_each(|v| *v = F::zero());
                row[y] = F::one();
            }
            self.labels[n] = *label;
        }
        Ok(())
    }

    /// Overwrites an unclamped row; clamped rows are left untouched.
    pub fn set_row(&mut self, n: usize, row: &[F]) -> Result<()> {
        if row.len() != self.truncation {
            return Err(Error::dim("Responsibilities::set_row", self.truncation, row.len()));
        }
        if self.is_clamped(n) {
            return Ok(());
        }
        self.phi[n * self.truncation..(n + 1) * self.truncation].copy_from_slice(row);
        Ok(())
    }

    /// `N_t = Σ_n φ_{n,t}`, summed in row order.
    pub fn counts(&self) -> Vec<F> {
        let mut counts = vec![F::zero(); self.truncation];
        for row in self.phi.chunks_exact(self.truncation.max(1)) {
            for (c, &p) in counts.iter_mut().zip(row) {
                *c += p;
            }
        }
        counts
    }

    /// `argmax_t φ_{n,t}` for every row, ties to the lowest index.
    pub fn hard_assignments(&self) -> Vec<usize> {
        (0..self.rows).map(|n| argmax(self.row(n))).collect()
    }
}

pub(crate) fn check_row<F: Scalar>(n: usize, row: &[F]) -> Result<()> {
    let sum: F = row.iter().copied().sum();
    if row.iter().any(|v| *v < F::zero() || !v.is_finite()) || (sum - F::one()).abs() > F::lit(1e-9) {
        return Err(Error::Numerical(format!("row {n} of responsibilities is not a probability vector")));
    }
    Ok(())
}

/// Index of the largest entry, ties broken toward the lowest index.
pub fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Recognition heads of one cluster, bottom layer first.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadStack<F> {
    pub layers: Vec<GaussianHead<F>>,
}

impl<F: Scalar> Parameterized<F> for HeadStack<F> {
    fn tensors(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(|h| h.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.layers.iter_mut().flat_map(|h| h.tensors_mut()).collect()
    }
}

/// Per-cluster, per-layer recognition networks `ψ_t^(l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceNets<F> {
    clusters: Vec<HeadStack<F>>,
}

impl<F: Scalar> InferenceNets<F> {
    pub fn new(clusters: Vec<HeadStack<F>>) -> Result<Self> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::Config("inference nets need at least one cluster".into()))?;
        let shape: Vec<(usize, usize)> = first.layers.iter().map(|h| (h.in_dim(), h.out_dim())).collect();
        if shape.is_empty() {
            return Err(Error::Config("inference nets need at least one layer".into()));
        }
        for c in &clusters {
            let s: Vec<(usize, usize)> = c.layers.iter().map(|h| (h.in_dim(), h.out_dim())).collect();
            if s != shape {
                return Err(Error::Config("all clusters need identical head shapes".into()));
            }
        }
        if shape.iter().any(|(i, _)| *i != shape[0].0) {
            return Err(Error::Config("every head must read the data vector".into()));
        }
        Ok(InferenceNets { clusters })
    }

    pub fn init<R: Rng + ?Sized>(
        data_dim: usize,
        arch: &Architecture,
        truncation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let clusters = (0..truncation)
            .map(|_| HeadStack {
                layers: arch
                    .latent_dims
                    .iter()
                    .map(|&p| GaussianHead::with_hidden(data_dim, &arch.hidden, p, rng))
                    .collect(),
            })
            .collect();
        InferenceNets::new(clusters)
    }

    pub fn truncation(&self) -> usize {
        self.clusters.len()
    }

    pub fn depth(&self) -> usize {
        self.clusters[0].layers.len()
    }

    pub fn data_dim(&self) -> usize {
        self.clusters[0].layers[0].in_dim()
    }

    /// Latent widths `[p_1, ..., p_L]`.
    pub fn latent_dims(&self) -> Vec<usize> {
        self.clusters[0].layers.iter().map(|h| h.out_dim()).collect()
    }

    pub fn cluster(&self, t: usize) -> &HeadStack<F> {
        &self.clusters[t]
    }

    pub fn clusters(&self) -> &[HeadStack<F>] {
        &self.clusters
    }

    pub fn clusters_mut(&mut self) -> &mut [HeadStack<F>] {
        &mut self.clusters
    }

    /// Head for cluster `t` and 0-based layer `l`.
    pub fn head(&self, t: usize, l: usize) -> &GaussianHead<F> {
        &self.clusters[t].layers[l]
    }
}

/// Everything the variational posterior `q_Φ` consists of, plus the running
/// sufficient statistics behind `γ`, `m`, `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState<F> {
    pub phi: Responsibilities<F>,
    pub gamma: StickPosterior<F>,
    pub nets: InferenceNets<F>,
    pub eta: F,
    pub stats: SufficientStats<F>,
}

impl<F: Scalar> VariationalState<F> {
    /// Prior sticks and empty statistics around the given `φ` and networks.
    pub fn new(phi: Responsibilities<F>, nets: InferenceNets<F>, eta: F) -> Result<Self> {
        if phi.truncation() != nets.truncation() {
            return Err(Error::dim("VariationalState truncation", nets.truncation(), phi.truncation()));
        }
        let top = *nets.latent_dims().last().expect("at least one layer");
        Ok(VariationalState {
            gamma: StickPosterior::prior(phi.truncation(), eta),
            stats: SufficientStats::zeros(phi.truncation(), top),
            phi,
            nets,
            eta,
        })
    }

    pub fn truncation(&self) -> usize {
        self.phi.truncation()
    }
}

/// How the responsibilities are initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiInit<F> {
    /// Softmax over negative distances to `T` k-means++ centres.
    KMeansPlusPlus,
    /// Rows drawn from a symmetric Dirichlet with the given concentration.
    Dirichlet(F),
}

/// Minibatch schedule for stochastic updates of `γ`, `m`, `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SviConfig<F> {
    pub batch_size: usize,
    pub tau: F,
    pub kappa: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F> {
    /// Truncation level `T` (at least 2).
    pub truncation: usize,
    /// DP concentration `η`.
    pub eta: F,
    /// Gradient ascent step `α`.
    pub alpha: F,
    /// Monte-Carlo samples per expectation `S`.
    pub samples: usize,
    /// Gradient epochs per outer iteration `E`.
    pub epochs: usize,
    pub max_outer_iters: usize,
    pub elbo_rel_tol: F,
    pub seed: u64,
    /// Minibatch size of the gradient epochs.
    pub grad_batch: usize,
    /// Responsibilities below this are skipped in gradient sums.
    pub phi_threshold: F,
    /// Optional cap on each cluster's gradient norm per step.
    pub grad_clip: Option<F>,
    pub init: PhiInit<F>,
    pub architecture: Architecture,
    pub svi: Option<SviConfig<F>>,
}

impl<F: Scalar> Default for TrainConfig<F> {
    fn default() -> Self {
        TrainConfig {
            truncation: 10,
            eta: F::one(),
            alpha: F::lit(0.01),
            samples: 4,
            epochs: 5,
            max_outer_iters: 50,
            elbo_rel_tol: F::lit(1e-5),
            seed: 0,
            grad_batch: 64,
            phi_threshold: F::lit(1e-8),
            grad_clip: Some(F::lit(3.0)),
            init: PhiInit::KMeansPlusPlus,
            architecture: Architecture::default(),
            svi: None,
        }
    }
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.truncation < 2 {
            return bad("truncation must be at least 2");
        }
        if !(self.eta > F::zero()) || !self.eta.is_finite() {
            return bad("eta must be positive");
        }
        if !(self.alpha >= F::zero()) || !self.alpha.is_finite() {
            return bad("alpha must be non-negative");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.grad_batch == 0 {
            return bad("grad_batch must be at least 1");
        }
        if !(self.elbo_rel_tol >= F::zero()) {
            return bad("elbo_rel_tol must be non-negative");
        }
        if !(self.phi_threshold >= F::zero()) {
            return bad("phi_threshold must be non-negative");
        }
        if let Some(c) = self.grad_clip {
            if !(c > F::zero()) {
                return bad("grad_clip must be positive");
            }
        }
        if let PhiInit::Dirichlet(c) = self.init {
            if !(c > F::zero()) || !c.is_finite() {
                return bad("Dirichlet concentration must be positive");
            }
        }
        if let Some(svi) = &self.svi {
            if svi.batch_size == 0 {
                return bad("svi batch size must be at least 1");
            }
            if !(svi.tau >= F::zero()) {
                return bad("svi tau must be non-negative");
            }
            if !(svi.kappa > F::lit(0.5) && svi.kappa <= F::one()) {
                return bad("svi kappa must lie in (0.5, 1]");
            }
        }
        self.architecture.validate()
    }
}
