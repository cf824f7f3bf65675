//! Per (data point, cluster) evaluation shared by the estimators and the
//! gradient step.
//!
//! For one pair the recognition heads give `q(h^(l) | x) = N(μ_l, diag σ²_l)`.
//! Latents are drawn as `h_l = μ_l + σ_l ⊙ ε_l`, `ε` read from the supplied
//! stream in the order sample-major, layer-minor. The top-layer prior term
//! `E_q[ln N(h^(L); m, V)]` is Gaussian in `h^(L)` and is evaluated in closed
//! form; the intermediate layers and the emission are Monte-Carlo averages.

use rand::Rng;

use crate::error::Result;
use crate::model::{ClusterParams, EmissionCache};
use crate::nn::{HeadCache, MlpCache, Parameterized};
use crate::rng::fill_std_normal;
use crate::special::{entropy_unchecked, log_pdf_unchecked, log_sum_exp};
use crate::Scalar;

use super::state::HeadStack;

pub(crate) struct PairWorkspace<F> {
    heads: Vec<HeadCache<F>>,
    eps: Vec<Vec<F>>,
    h: Vec<Vec<F>>,
    maps: Vec<MlpCache<F>>,
    emission: Option<EmissionCache<F>>,
    grad_h: Vec<Vec<F>>,
    grad_mean: Vec<Vec<F>>,
    grad_var: Vec<Vec<F>>,
}

impl<F: Scalar> PairWorkspace<F> {
    pub(crate) fn new() -> Self {
        PairWorkspace {
            heads: Vec::new(),
            eps: Vec::new(),
            h: Vec::new(),
            maps: Vec::new(),
            emission: None,
            grad_h: Vec::new(),
            grad_mean: Vec::new(),
            grad_var: Vec::new(),
        }
    }

    fn prepare(&mut self, cluster: &ClusterParams<F>, dims: &[usize]) {
        let depth = cluster.depth();
        self.heads.resize_with(depth, HeadCache::default);
        self.maps.resize_with(depth.saturating_sub(1), MlpCache::default);
        for buf in [&mut self.eps, &mut self.h, &mut self.grad_h, &mut self.grad_mean, &mut self.grad_var] {
            buf.resize_with(depth, Vec::new);
            for (l, v) in buf.iter_mut().enumerate() {
                v.resize(dims[l + 1], F::zero());
            }
        }
        let kind_ok = matches!(
            (&self.emission, cluster.emission()),
            (Some(EmissionCache::Bernoulli(_)), crate::model::Emission::Bernoulli(_))
                | (Some(EmissionCache::Gaussian(_)), crate::model::Emission::Gaussian(_))
        );
        if !kind_ok {
            self.emission = Some(cluster.emission().new_cache());
        }
    }
}

/// Quantities of one pair used by the responsibilities, the ELBO and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerms<F> {
    /// Estimate of `E_q[ln p(x, h | z = t)]`.
    pub expected_log_joint: F,
    /// `Σ_l H[q_t^(l)(· | x)]`.
    pub entropy: F,
    /// `ln (1/S) Σ_s p_X(x | f(h_s))`.
    pub log_expected_emission: F,
    /// Per-sample values whose mean is `expected_log_joint`.
    pub samples: Vec<F>,
}

fn top_prior_expectation<F: Scalar>(mean: &[F], var: &[F], m: &[F], v: &[F]) -> F {
    let half = F::lit(0.5);
    let ln_two_pi = F::lit(std::f64::consts::TAU.ln());
    let mut acc = F::zero();
    for j in 0..mean.len() {
        let d = mean[j] - m[j];
        acc -= half * (ln_two_pi + v[j].ln()) + (var[j] + d * d) / (F::lit(2.0) * v[j]);
    }
    acc
}

fn draw_latents<F: Scalar, R: Rng + ?Sized>(ws: &mut PairWorkspace<F>, rng: &mut R) {
    for l in 0..ws.heads.len() {
        fill_std_normal(rng, &mut ws.eps[l]);
        let (mean, var) = (ws.heads[l].mean(), ws.heads[l].var());
        for j in 0..mean.len() {
            ws.h[l][j] = mean[j] + var[j].sqrt() * ws.eps[l][j];
        }
    }
}

/// Forward through the generative chain below the top layer; returns
/// `(Σ_{l<L} ln N(h_l; f_l(h_{l+1}), s_l²), ln p_X(x | h_1))`.
fn chain_log_prob<F: Scalar>(
    x: &[F],
    cluster: &ClusterParams<F>,
    ws: &mut PairWorkspace<F>,
) -> Result<(F, F)> {
    let depth = cluster.depth();
    let mut layers = F::zero();
    for l in (0..depth - 1).rev() {
        cluster.layer_maps()[l].forward_cached(&ws.h[l + 1], &mut ws.maps[l])?;
        let var = cluster.noise_var(l);
        layers += log_pdf_unchecked(&ws.h[l], ws.maps[l].output(), &var);
    }
    let cache = ws.emission.as_mut().expect("workspace prepared");
    let emission = cluster.emission().log_prob_cached(&ws.h[0], x, cache)?;
    Ok((layers, emission))
}

pub(crate) fn forward_heads<F: Scalar>(
    x: &[F],
    heads: &HeadStack<F>,
    ws: &mut PairWorkspace<F>,
) -> Result<()> {
    for (head, cache) in heads.layers.iter().zip(ws.heads.iter_mut()) {
        head.forward_cached(x, cache)?;
    }
    Ok(())
}

pub(crate) fn pair_terms<F: Scalar, R: Rng + ?Sized>(
    x: &[F],
    cluster: &ClusterParams<F>,
    heads: &HeadStack<F>,
    dims: &[usize],
    samples: usize,
    rng: &mut R,
    ws: &mut PairWorkspace<F>,
) -> Result<PairTerms<F>> {
    ws.prepare(cluster, dims);
    forward_heads(x, heads, ws)?;
    let depth = cluster.depth();
    let top = &ws.heads[depth - 1];
    let top_term = top_prior_expectation(top.mean(), top.var(), &cluster.top_mean, &cluster.top_var);
    let entropy = ws.heads.iter().map(|c| entropy_unchecked(c.var())).sum();
    let mut values = Vec::with_capacity(samples);
    let mut emissions = Vec::with_capacity(samples);
    for _ in 0..samples {
        draw_latents(ws, rng);
        let (layers, emission) = chain_log_prob(x, cluster, ws)?;
        values.push(top_term + layers + emission);
        emissions.push(emission);
    }
    let s = F::from_usize_lossy(samples);
    let expected_log_joint = values.iter().copied().sum::<F>() / s;
    Ok(PairTerms {
        expected_log_joint,
        entropy,
        log_expected_emission: log_sum_exp(&emissions) - s.ln(),
        samples: values,
    })
}

/// Adds `weight * ∇[Σ_l H_l + E_q ln p(x, h | t)]` (frozen noise from `rng`)
/// into `grad_lambda` / `grad_psi` and returns `weight * value`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_gradient<F: Scalar, R: Rng + ?Sized>(
    x: &[F],
    cluster: &ClusterParams<F>,
    heads: &HeadStack<F>,
    dims: &[usize],
    samples: usize,
    weight: F,
    rng: &mut R,
    ws: &mut PairWorkspace<F>,
    grad_lambda: &mut [Vec<F>],
    grad_psi: &mut [Vec<F>],
) -> Result<F> {
    ws.prepare(cluster, dims);
    forward_heads(x, heads, ws)?;
    let depth = cluster.depth();
    let half = F::lit(0.5);
    let s_inv = F::one() / F::from_usize_lossy(samples);
    let sample_scale = weight * s_inv;

    // Entropy and the closed-form top prior term.
    let mut value = F::zero();
    for l in 0..depth {
        let var = ws.heads[l].var();
        value += entropy_unchecked(var);
        for j in 0..var.len() {
            ws.grad_mean[l][j] = F::zero();
            ws.grad_var[l][j] = weight * half / var[j];
        }
    }
    {
        let top = &ws.heads[depth - 1];
        value += top_prior_expectation(top.mean(), top.var(), &cluster.top_mean, &cluster.top_var);
        for j in 0..top.mean().len() {
            let v = cluster.top_var[j];
            ws.grad_mean[depth - 1][j] -= weight * (top.mean()[j] - cluster.top_mean[j]) / v;
            ws.grad_var[depth - 1][j] -= weight * half / v;
        }
    }
    value *= weight;

    let map_tensors = cluster.map_tensor_count();
    let map_offsets: Vec<usize> = cluster
        .layer_maps()
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.num_tensors();
            Some(o)
        })
        .collect();
    let noise_vars: Vec<Vec<F>> = (0..depth - 1).map(|l| cluster.noise_var(l)).collect();
    let noise_dvar: Vec<Vec<F>> = (0..depth - 1).map(|l| cluster.noise_var_grad(l)).collect();

    for _ in 0..samples {
        draw_latents(ws, rng);
        let (layers, emission) = chain_log_prob(x, cluster, ws)?;
        value += sample_scale * (layers + emission);

        let (_, emission_grads) = grad_lambda.split_at_mut(map_tensors + depth - 1);
        let cache = ws.emission.as_ref().expect("workspace prepared");
        let g1 = cluster.emission().backward_acc(cache, x, sample_scale, emission_grads)?;
        ws.grad_h[0].copy_from_slice(&g1);
        for l in 1..depth {
            ws.grad_h[l].iter_mut().for_each(|g| *g = F::zero());
        }
        for l in 0..depth - 1 {
            let f = ws.maps[l].output();
            let var = &noise_vars[l];
            let mut g_f = Vec::with_capacity(var.len());
            for j in 0..var.len() {
                let r = ws.h[l][j] - f[j];
                ws.grad_h[l][j] -= sample_scale * r / var[j];
                g_f.push(sample_scale * r / var[j]);
                let d_var = -half / var[j] + half * r * r / (var[j] * var[j]);
                grad_lambda[map_tensors + l][j] += sample_scale * d_var * noise_dvar[l][j];
            }
            let map = &cluster.layer_maps()[l];
            let start = map_offsets[l];
            let g_up = map.backward_acc(&ws.maps[l], &g_f, &mut grad_lambda[start..start + map.num_tensors()])?;
            for (g, u) in ws.grad_h[l + 1].iter_mut().zip(g_up) {
                *g += u;
            }
        }
        for l in 0..depth {
            let var = ws.heads[l].var();
            for j in 0..var.len() {
                let g = ws.grad_h[l][j];
                ws.grad_mean[l][j] += g;
                ws.grad_var[l][j] += g * ws.eps[l][j] * half / var[j].sqrt();
            }
        }
    }

    let mut offset = 0;
    for (l, head) in heads.layers.iter().enumerate() {
        let n = head.num_tensors();
        head.backward_acc(
            &ws.heads[l],
            &ws.grad_mean[l],
            &ws.grad_var[l],
            &mut grad_psi[offset..offset + n],
        )?;
        offset += n;
    }
    Ok(value)
}
