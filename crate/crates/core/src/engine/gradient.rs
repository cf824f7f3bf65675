//! Reparameterized gradient ascent on the `(Λ, ψ)` part of the ELBO.
//!
//! The objective of a step over a batch `B` is the batch mean
//!
//! `(1/|B|) Σ_{n∈B} Σ_t φ_{n,t} { Σ_l H[q_t^(l)(·|x_n)] + E_q[ln p(x_n, h | t)] }`
//!
//! with pairs below the responsibility threshold skipped. Clusters own
//! disjoint parameters, so the per-cluster gradients are computed in parallel
//! without a shared reduction.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::GenerativeParams;
use crate::nn::{sgd_step, GradBuffer, Parameterized};
use crate::rng::stream;
use crate::Scalar;

use super::kernel::{pair_gradient, PairWorkspace};
use super::state::{Responsibilities, VariationalState};

/// Objective value and per-cluster gradients.
#[derive(Debug, Clone)]
pub struct ObjectiveGradient<F> {
    pub value: F,
    /// Gradients of `Λ_t` (layer maps, noise scales, emission) per cluster.
    pub lambda: Vec<GradBuffer<F>>,
    /// Gradients of `ψ_t` (recognition heads) per cluster.
    pub psi: Vec<GradBuffer<F>>,
}

fn check_batch<F: Scalar>(x: &[Vec<F>], batch: &[usize], phi: &Responsibilities<F>) -> Result<()> {
    if phi.rows() != x.len() {
        return Err(Error::dim("gradient rows", x.len(), phi.rows()));
    }
    if let Some(&n) = batch.iter().find(|&&n| n >= x.len()) {
        return Err(Error::Index {
            context: "gradient batch",
            index: n,
            len: x.len(),
        });
    }
    Ok(())
}

/// Frozen-noise objective and its exact gradient. Noise of pair `(n, t)` is
/// stream `n * T + t` of `noise_seed`.
#[allow(clippy::too_many_arguments)]
pub fn objective_gradient<F: Scalar>(
    x: &[Vec<F>],
    batch: &[usize],
    state: &VariationalState<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    phi_threshold: F,
    noise_seed: u64,
) -> Result<ObjectiveGradient<F>> {
    check_batch(x, batch, &state.phi)?;
    let truncation = theta.truncation();
    let scale = F::one() / F::from_usize_lossy(batch.len().max(1));
    let per_cluster: Vec<(F, GradBuffer<F>, GradBuffer<F>)> = (0..truncation)
        .into_par_iter()
        .map(|t| {
            let cluster = theta.cluster(t)?;
            let heads = state.nets.cluster(t);
            let mut g_lambda = cluster.zero_grad();
            let mut g_psi = heads.zero_grad();
            let mut ws = PairWorkspace::new();
            let mut value = F::zero();
            for &n in batch {
                let w = state.phi.get(n, t);
                if w <= phi_threshold {
                    continue;
                }
                let mut rng = stream(noise_seed, (n * truncation + t) as u64);
                value += pair_gradient(
                    &x[n],
                    cluster,
                    heads,
                    theta.dims(),
                    samples,
                    w * scale,
                    &mut rng,
                    &mut ws,
                    &mut g_lambda.tensors,
                    &mut g_psi.tensors,
                )?;
            }
            Ok((value, g_lambda, g_psi))
        })
        .collect::<Result<_>>()?;
    let mut out = ObjectiveGradient {
        value: F::zero(),
        lambda: Vec::with_capacity(truncation),
        psi: Vec::with_capacity(truncation),
    };
    for (v, gl, gp) in per_cluster {
        out.value += v;
        out.lambda.push(gl);
        out.psi.push(gp);
    }
    Ok(out)
}

/// Objective value only, with the same frozen noise as [`objective_gradient`].
pub fn objective_value<F: Scalar>(
    x: &[Vec<F>],
    batch: &[usize],
    state: &VariationalState<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    phi_threshold: F,
    noise_seed: u64,
) -> Result<F> {
    Ok(objective_gradient(x, batch, state, theta, samples, phi_threshold, noise_seed)?.value)
}

/// Scales `lambda` and `psi` jointly so their L2 norm is at most `max_norm`.
fn clip_norm<F: Scalar>(lambda: &mut GradBuffer<F>, psi: &mut GradBuffer<F>, max_norm: F) {
    let sq: F = lambda.iter_flat().chain(psi.iter_flat()).map(|g| g * g).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in lambda.tensors.iter_mut().chain(psi.tensors.iter_mut()) {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// One ascent step `Λ ← Λ + α ∂_Λ L`, `ψ ← ψ + α ∂_ψ L` on the batch.
/// With `clip = Some(c)` each cluster's gradient is rescaled to norm at most
/// `c` first. Returns the objective value before the step.
#[allow(clippy::too_many_arguments)]
pub fn grad_step<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    batch: &[usize],
    state: &mut VariationalState<F>,
    theta: &mut GenerativeParams<F>,
    alpha: F,
    samples: usize,
    phi_threshold: F,
    clip: Option<F>,
    rng: &mut R,
) -> Result<F> {
    let noise_seed = rng.next_u64();
    let mut grads = objective_gradient(x, batch, state, theta, samples, phi_threshold, noise_seed)?;
    if !grads.value.is_finite() {
        return Err(Error::Numerical("non-finite gradient objective".into()));
    }
    for (t, (gl, gp)) in grads.lambda.iter_mut().zip(grads.psi.iter_mut()).enumerate() {
        if let Some(c) = clip {
            clip_norm(gl, gp, c);
        }
        sgd_step(&mut theta.clusters_mut()[t], gl, alpha)?;
        sgd_step(&mut state.nets.clusters_mut()[t], gp, alpha)?;
    }
    Ok(grads.value)
}
