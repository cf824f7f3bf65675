//! Closed-form coordinate updates for the stick posteriors and the top-layer prior.
//!
//! Both updates are functions of per-cluster sufficient statistics
//!
//! * `N_t = Σ φ_{n,t}`
//! * `Σ φ_{n,t} μ_t(x_n)`
//! * `Σ φ_{n,t} (σ²_t(x_n) + μ_t(x_n)²)`
//!
//! where `μ_t`, `σ²_t` are the top-layer recognition outputs of cluster `t`.
//! Keeping the statistics explicit lets the minibatch variant blend them and
//! reuse exactly the same finalisation as the full-batch update.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::GenerativeParams;
use crate::nn::HeadCache;
use crate::scalar::floor_var;
use crate::Scalar;

use super::state::{InferenceNets, Responsibilities, StickPosterior};

/// Top-layer `(mean, var)` of one pair, `None` when its responsibility is zero.
type HeadMoments<F> = Option<(Vec<F>, Vec<F>)>;

/// Clusters with less mass than this keep their previous `(m, V)`.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats<F> {
    pub counts: Vec<F>,
    pub mean_sums: Vec<Vec<F>>,
    pub sq_sums: Vec<Vec<F>>,
}

impl<F: Scalar> SufficientStats<F> {
    pub fn zeros(truncation: usize, top_dim: usize) -> Self {
        SufficientStats {
            counts: vec![F::zero(); truncation],
            mean_sums: vec![vec![F::zero(); top_dim]; truncation],
            sq_sums: vec![vec![F::zero(); top_dim]; truncation],
        }
    }

    /// Statistics of the rows `rows` (in the given order).
    pub fn collect(
        x: &[Vec<F>],
        rows: &[usize],
        phi: &Responsibilities<F>,
        nets: &InferenceNets<F>,
    ) -> Result<Self> {
        let truncation = phi.truncation();
        let top = nets.depth() - 1;
        let top_dim = nets.head(0, top).out_dim();
        // Per-row head outputs in parallel, reduced sequentially in row order.
        let per_row: Vec<Vec<HeadMoments<F>>> = rows
            .par_iter()
            .map(|&n| {
                let mut cache = HeadCache::default();
                (0..truncation)
                    .map(|t| {
                        if phi.get(n, t) == F::zero() {
                            return Ok(None);
                        }
                        nets.head(t, top).forward_cached(&x[n], &mut cache)?;
                        Ok(Some((cache.mean().to_vec(), cache.var().to_vec())))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut stats = SufficientStats::zeros(truncation, top_dim);
        for (&n, outputs) in rows.iter().zip(&per_row) {
            for (t, out) in outputs.iter().enumerate() {
                let w = phi.get(n, t);
                stats.counts[t] += w;
                if let Some((mean, var)) = out {
                    for j in 0..top_dim {
                        stats.mean_sums[t][j] += w * mean[j];
                        stats.sq_sums[t][j] += w * (var[j] + mean[j] * mean[j]);
                    }
                }
            }
        }
        Ok(stats)
    }

    /// `self ← (1 - ρ) self + ρ · scale · batch`.
    pub fn blend(&mut self, batch: &Self, rho: F, scale: F) {
        let keep = F::one() - rho;
        let mix = |old: &mut F, new: F| *old = keep * *old + rho * (scale * new);
        for t in 0..self.counts.len() {
            mix(&mut self.counts[t], batch.counts[t]);
            for j in 0..self.mean_sums[t].len() {
                mix(&mut self.mean_sums[t][j], batch.mean_sums[t][j]);
                mix(&mut self.sq_sums[t][j], batch.sq_sums[t][j]);
            }
        }
    }

    pub fn stick_posterior(&self, eta: F) -> StickPosterior<F> {
        stick_posterior_from_counts(&self.counts, eta)
    }

    /// `m_t = S1/N_t`, `V_t = S2/N_t - m_t²` (floored); `None` for empty clusters.
    pub fn top_prior(&self) -> TopPriorUpdate<F> {
        let clusters = self
            .counts
            .iter()
            .enumerate()
            .map(|(t, &nt)| {
                if nt < F::lit(EMPTY_CLUSTER_MASS) {
                    return None;
                }
                let mean: Vec<F> = self.mean_sums[t].iter().map(|&s| s / nt).collect();
                let var = self.sq_sums[t]
                    .iter()
                    .zip(&mean)
                    .map(|(&s, &m)| floor_var(s / nt - m * m))
                    .collect();
                Some((mean, var))
            })
            .collect();
        TopPriorUpdate { clusters }
    }
}

/// `γ_{1,t} = 1 + N_t`, `γ_{2,t} = η + Σ_{r>t} N_r` for `t < T - 1`.
pub fn stick_posterior_from_counts<F: Scalar>(counts: &[F], eta: F) -> StickPosterior<F> {
    let free = counts.len().saturating_sub(1);
    let mut gamma1 = Vec::with_capacity(free);
    let mut gamma2 = vec![F::zero(); free];
    let mut tail = F::zero();
    for t in (0..free).rev() {
        tail += counts[t + 1];
        gamma2[t] = eta + tail;
    }
    for &c in &counts[..free] {
        gamma1.push(F::one() + c);
    }
    StickPosterior::new(gamma1, gamma2).expect("counts are non-negative and eta positive")
}

/// Fixed-point update of the stick posteriors from `φ`.
pub fn update_gamma<F: Scalar>(phi: &Responsibilities<F>, eta: F) -> StickPosterior<F> {
    stick_posterior_from_counts(&phi.counts(), eta)
}

/// New `(m_t, V_t)` per cluster; `None` marks an empty cluster left unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct TopPriorUpdate<F> {
    pub clusters: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Scalar> TopPriorUpdate<F> {
    /// Writes the update into `theta`; returns the skipped cluster indices.
    pub fn apply(self, theta: &mut GenerativeParams<F>) -> Result<Vec<usize>> {
        let mut skipped = Vec::new();
        for (t, upd) in self.clusters.into_iter().enumerate() {
            match upd {
                Some((m, v)) => theta.set_top_prior(t, m, v)?,
                None => skipped.push(t),
            }
        }
        Ok(skipped)
    }

    pub fn skipped(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .enumerate()
            .filter_map(|(t, c)| c.is_none().then_some(t))
            .collect()
    }
}

/// Weighted mean / second moment of the top-layer recognition posteriors.
pub fn update_top_prior<F: Scalar>(
    phi: &Responsibilities<F>,
    nets: &InferenceNets<F>,
    x: &[Vec<F>],
) -> Result<TopPriorUpdate<F>> {
    let rows: Vec<usize> = (0..phi.rows()).collect();
    Ok(SufficientStats::collect(x, &rows, phi, nets)?.top_prior())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_data_gives_prior_sticks() {
        let phi = Responsibilities::<f64>::uniform(0, 4);
        let g = update_gamma(&phi, 2.5);
        assert_eq!(g.gamma1(), &[1.0; 3]);
        assert_eq!(g.gamma2(), &[2.5; 3]);
    }

    #[test]
    fn two_points_two_clusters() {
        let phi = Responsibilities::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = update_gamma(&phi, 1.0);
        assert_eq!(g.gamma1(), &[2.0]);
        assert_eq!(g.gamma2(), &[2.0]);
    }

    #[test]
    fn all_mass_on_first_cluster() {
        let rows = vec![vec![1.0, 0.0, 0.0]; 3];
        let phi = Responsibilities::from_rows(&rows).unwrap();
        let g = update_gamma(&phi, 0.7);
        assert_eq!(g.gamma1(), &[4.0, 1.0]);
        assert_eq!(g.gamma2(), &[0.7, 0.7]);
    }

    #[test]
    fn blend_with_unit_rho_replaces() {
        let mut a = SufficientStats::<f64>::zeros(2, 1);
        a.counts = vec![3.0, 4.0];
        let mut b = SufficientStats::<f64>::zeros(2, 1);
        b.counts = vec![1.5, 2.5];
        b.mean_sums = vec![vec![0.1], vec![0.2]];
        let mut c = a.clone();
        c.blend(&b, 1.0, 1.0);
        assert_eq!(c, b);
        let mut d = a.clone();
        d.blend(&b, 0.0, 4.0);
        assert_eq!(d, a);
    }
}
