//! Monte-Carlo estimators: expected log joint, responsibilities, ELBO and the
//! predictive cluster distribution.
//!
//! Row-level work runs in parallel. Pair `(n, t)` draws its noise from
//! stream `n * T + t` of a base seed taken from the caller's generator, so two
//! calls with identically seeded generators see identical noise.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::GenerativeParams;
use crate::rng::stream;
use crate::special::{expected_log_pi_all, expected_stick_weights, kl_beta_unchecked, log_sum_exp};
use crate::Scalar;

use super::kernel::{pair_terms, PairTerms, PairWorkspace};
use super::state::{InferenceNets, Responsibilities, StickPosterior, VariationalState};

fn check_compat<F: Scalar>(theta: &GenerativeParams<F>, nets: &InferenceNets<F>) -> Result<()> {
    if theta.truncation() != nets.truncation() {
        return Err(Error::dim("truncation", theta.truncation(), nets.truncation()));
    }
    if theta.dims()[1..] != nets.latent_dims()[..] || theta.data_dim() != nets.data_dim() {
        return Err(Error::Config("generative and recognition layer widths differ".into()));
    }
    Ok(())
}

fn check_x<F: Scalar>(theta: &GenerativeParams<F>, x: &[F]) -> Result<()> {
    if x.len() != theta.data_dim() {
        return Err(Error::dim("data point", theta.data_dim(), x.len()));
    }
    Ok(())
}

/// All quantities of the pair `(x, t)`.
pub fn pair_estimate<F: Scalar, R: Rng + ?Sized>(
    x: &[F],
    t: usize,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
) -> Result<PairTerms<F>> {
    check_compat(theta, nets)?;
    check_x(theta, x)?;
    if samples == 0 {
        return Err(Error::Config("at least one Monte-Carlo sample required".into()));
    }
    let mut ws = PairWorkspace::new();
    pair_terms(x, theta.cluster(t)?, nets.cluster(t), theta.dims(), samples, rng, &mut ws)
}

/// Reparameterized estimate of `E_q[ln p(x, h^(1:L) | z = t)]`.
pub fn mc_expected_log_joint<F: Scalar, R: Rng + ?Sized>(
    x: &[F],
    t: usize,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
) -> Result<F> {
    Ok(pair_estimate(x, t, nets, theta, samples, rng)?.expected_log_joint)
}

/// Unnormalised log-responsibilities of one row.
fn row_log_weights<F: Scalar>(
    x: &[F],
    n: usize,
    elp: &[F],
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    base: u64,
) -> Result<Vec<F>> {
    let truncation = theta.truncation();
    let mut ws = PairWorkspace::new();
    (0..truncation)
        .map(|t| {
            let mut rng = stream(base, (n * truncation + t) as u64);
            let terms = pair_terms(x, theta.cluster(t)?, nets.cluster(t), theta.dims(), samples, &mut rng, &mut ws)?;
            Ok(elp[t] + terms.expected_log_joint + terms.entropy)
        })
        .collect()
}

fn normalise_log_row<F: Scalar>(n: usize, log_w: &[F]) -> Result<Vec<F>> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return Err(Error::Numerical(format!("responsibility normaliser of row {n} is {}", lse)));
    }
    Ok(log_w.iter().map(|&v| (v - lse).exp()).collect())
}

/// Responsibilities of arbitrary points under the current posterior, without
/// clamping. Used for held-out data.
pub fn responsibilities_for<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    gamma: &StickPosterior<F>,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<F>>> {
    check_compat(theta, nets)?;
    let elp = expected_log_pi_all(gamma);
    let base = rng.next_u64();
    x.par_iter()
        .enumerate()
        .map(|(n, xn)| {
            check_x(theta, xn)?;
            let lw = row_log_weights(xn, n, &elp, nets, theta, samples, base)?;
            normalise_log_row(n, &lw)
        })
        .collect()
}

/// Fixed-point update of `φ` for every unclamped row.
#[allow(clippy::too_many_arguments)]
pub fn update_phi<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    gamma: &StickPosterior<F>,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
    current: &Responsibilities<F>,
) -> Result<Responsibilities<F>> {
    let rows: Vec<usize> = (0..current.rows()).collect();
    update_phi_rows(x, &rows, gamma, nets, theta, samples, rng, current)
}

/// [`update_phi`] restricted to `rows`.
#[allow(clippy::too_many_arguments)]
pub fn update_phi_rows<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    rows: &[usize],
    gamma: &StickPosterior<F>,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
    current: &Responsibilities<F>,
) -> Result<Responsibilities<F>> {
    check_compat(theta, nets)?;
    if current.truncation() != theta.truncation() || current.rows() != x.len() {
        return Err(Error::dim("update_phi rows", x.len(), current.rows()));
    }
    let elp = expected_log_pi_all(gamma);
    let base = rng.next_u64();
    let new_rows: Vec<Option<Vec<F>>> = rows
        .par_iter()
        .map(|&n| {
            if current.is_clamped(n) {
                return Ok(None);
            }
            check_x(theta, &x[n])?;
            let lw = row_log_weights(&x[n], n, &elp, nets, theta, samples, base)?;
            normalise_log_row(n, &lw).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut out = current.clone();
    for (&n, row) in rows.iter().zip(new_rows) {
        if let Some(row) = row {
            out.set_row(n, &row)?;
        }
    }
    Ok(out)
}

/// Monte-Carlo estimate of the evidence lower bound.
pub fn elbo<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    state: &VariationalState<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
) -> Result<F> {
    check_compat(theta, &state.nets)?;
    let phi = &state.phi;
    if phi.rows() != x.len() {
        return Err(Error::dim("elbo rows", x.len(), phi.rows()));
    }
    let truncation = theta.truncation();
    let elp = expected_log_pi_all(&state.gamma);
    let base = rng.next_u64();
    let per_row: Vec<F> = x
        .par_iter()
        .enumerate()
        .map(|(n, xn)| {
            check_x(theta, xn)?;
            let mut ws = PairWorkspace::new();
            let mut acc = F::zero();
            for t in 0..truncation {
                let w = phi.get(n, t);
                if w == F::zero() {
                    continue;
                }
                let mut rng = stream(base, (n * truncation + t) as u64);
                let terms = pair_terms(xn, theta.cluster(t)?, state.nets.cluster(t), theta.dims(), samples, &mut rng, &mut ws)?;
                acc += w * (terms.expected_log_joint + terms.entropy + elp[t] - w.ln());
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let data_term: F = per_row.into_iter().sum();
    let kl: F = state
        .gamma
        .gamma1()
        .iter()
        .zip(state.gamma.gamma2())
        .map(|(&a, &b)| kl_beta_unchecked(a, b, F::one(), state.eta))
        .sum();
    Ok(data_term - kl)
}

/// Predictive `p(z = k | x)` ∝ `E_q[π_k] · E_{q_k}[p_X(x | f(h))]`.
pub fn predict_cluster<F: Scalar, R: Rng + ?Sized>(
    x: &[F],
    gamma: &StickPosterior<F>,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    check_compat(theta, nets)?;
    check_x(theta, x)?;
    let base = rng.next_u64();
    predict_row(x, 0, gamma, nets, theta, samples, base)
}

fn predict_row<F: Scalar>(
    x: &[F],
    n: usize,
    gamma: &StickPosterior<F>,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    base: u64,
) -> Result<Vec<F>> {
    let truncation = theta.truncation();
    let weights = expected_stick_weights(gamma);
    let mut ws = PairWorkspace::new();
    // Every cluster sees the same noise, so identical clusters score identically.
    let log_w: Vec<F> = (0..truncation)
        .map(|t| {
            let mut rng = stream(base, n as u64);
            let terms = pair_terms(x, theta.cluster(t)?, nets.cluster(t), theta.dims(), samples, &mut rng, &mut ws)?;
            Ok(weights[t].ln() + terms.log_expected_emission)
        })
        .collect::<Result<_>>()?;
    normalise_log_row(n, &log_w)
}

/// [`predict_cluster`] for many points, in parallel.
pub fn predict_many<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    gamma: &StickPosterior<F>,
    nets: &InferenceNets<F>,
    theta: &GenerativeParams<F>,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<F>>> {
    check_compat(theta, nets)?;
    let base = rng.next_u64();
    x.par_iter()
        .enumerate()
        .map(|(n, xn)| {
            check_x(theta, xn)?;
            predict_row(xn, n, gamma, nets, theta, samples, base)
        })
        .collect()
}
