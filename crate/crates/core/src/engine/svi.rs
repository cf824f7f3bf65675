//! Minibatch (stochastic) updates of `γ`, `m`, `V`.
//!
//! Batch statistics are rescaled by `N / B` and blended into the running
//! statistics with step `ρ_t`; `γ`, `m`, `V` are then re-derived from the
//! running statistics exactly as in the full-batch update.

use crate::error::{Error, Result};
use crate::model::GenerativeParams;
use crate::Scalar;

use super::closed_form::SufficientStats;
use super::state::VariationalState;

/// Robbins-Monro step `ρ_t = (t + τ)^(-κ)`, `κ ∈ (0.5, 1]`, `t + τ ≥ 1`.
pub fn rho_schedule<F: Scalar>(t: usize, tau: F, kappa: F) -> Result<F> {
    if !(kappa > F::lit(0.5) && kappa <= F::one()) {
        return Err(Error::Domain {
            func: "rho_schedule",
            value: kappa.to_f64_lossy(),
            expected: "kappa in (0.5, 1]",
        });
    }
    if !(tau >= F::zero()) {
        return Err(Error::Domain {
            func: "rho_schedule",
            value: tau.to_f64_lossy(),
            expected: "tau >= 0",
        });
    }
    let base = F::from_usize_lossy(t) + tau;
    if base < F::one() {
        return Err(Error::Domain {
            func: "rho_schedule",
            value: base.to_f64_lossy(),
            expected: "t + tau >= 1",
        });
    }
    Ok(base.powf(-kappa))
}

/// One stochastic update of `(γ, m, V)` from the rows in `batch`.
/// Returns the clusters whose `(m, V)` were left unchanged for lack of mass.
pub fn svi_step<F: Scalar>(
    x: &[Vec<F>],
    batch: &[usize],
    state: &mut VariationalState<F>,
    theta: &mut GenerativeParams<F>,
    rho: F,
) -> Result<Vec<usize>> {
    if batch.is_empty() {
        return Err(Error::Data("svi_step needs a non-empty batch".into()));
    }
    if batch.len() > x.len() {
        return Err(Error::dim("svi batch", x.len(), batch.len()));
    }
    if !(rho >= F::zero() && rho <= F::one()) {
        return Err(Error::Domain {
            func: "svi_step",
            value: rho.to_f64_lossy(),
            expected: "rho in [0, 1]",
        });
    }
    let batch_stats = SufficientStats::collect(x, batch, &state.phi, &state.nets)?;
    let scale = F::from_usize_lossy(x.len()) / F::from_usize_lossy(batch.len());
    state.stats.blend(&batch_stats, rho, scale);
    state.gamma = state.stats.stick_posterior(state.eta);
    state.stats.top_prior().apply(theta)
}
