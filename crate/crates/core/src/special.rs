//! Special functions and closed-form distributional quantities.
//!
//! `ln_gamma` and `digamma` shift the argument upward with the recurrence
//! until it reaches the asymptotic regime (x >= 10), then evaluate the
//! Stirling / de Moivre series. Everything likelihood-related is kept in the
//! log domain.

use crate::engine::StickPosterior;
use crate::error::{Error, Result};
use crate::Scalar;

const ASYMPTOTIC_START: f64 = 10.0;

/// Diagonal Gaussian `N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<F> {
    mean: Vec<F>,
    var: Vec<F>,
}

impl<F: Scalar> DiagGaussian<F> {
    pub fn new(mean: Vec<F>, var: Vec<F>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim("DiagGaussian::new", mean.len(), var.len()));
        }
        if let Some(v) = var.iter().find(|v| !(**v > F::zero())) {
            return Err(Error::Domain {
                func: "DiagGaussian::new",
                value: v.to_f64_lossy(),
                expected: "variance > 0",
            });
        }
        Ok(DiagGaussian { mean, var })
    }

    /// Standard normal of dimension `dim`.
    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![F::zero(); dim],
            var: vec![F::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[F] {
        &self.mean
    }

    pub fn var(&self) -> &[F] {
        &self.var
    }

    pub fn into_parts(self) -> (Vec<F>, Vec<F>) {
        (self.mean, self.var)
    }
}

/// Shape parameters of a beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams<F> {
    a: F,
    b: F,
}

impl<F: Scalar> BetaParams<F> {
    pub fn new(a: F, b: F) -> Result<Self> {
        for v in [a, b] {
            if !(v > F::zero()) || !v.is_finite() {
                return Err(Error::Domain {
                    func: "BetaParams::new",
                    value: v.to_f64_lossy(),
                    expected: "shape > 0",
                });
            }
        }
        Ok(BetaParams { a, b })
    }

    pub fn a(&self) -> F {
        self.a
    }

    pub fn b(&self) -> F {
        self.b
    }

    pub fn mean(&self) -> F {
        self.a / (self.a + self.b)
    }
}

fn check_positive<F: Scalar>(func: &'static str, x: F) -> Result<()> {
    if x > F::zero() && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain {
            func,
            value: x.to_f64_lossy(),
            expected: "x > 0",
        })
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma<F: Scalar>(x: F) -> Result<F> {
    check_positive("ln_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked<F: Scalar>(x: F) -> F {
    if x.is_infinite() {
        return x;
    }
    let start = F::lit(ASYMPTOTIC_START);
    let mut z = x;
    let mut prod = F::one();
    while z < start {
        prod *= z;
        z += F::one();
    }
    let inv = z.recip();
    let inv2 = inv * inv;
    // Stirling series in 1/z, terms through z^-11.
    let series = inv
        * (F::lit(1.0 / 12.0)
            + inv2
                * (F::lit(-1.0 / 360.0)
                    + inv2
                        * (F::lit(1.0 / 1260.0)
                            + inv2
                                * (F::lit(-1.0 / 1680.0)
                                    + inv2
                                        * (F::lit(1.0 / 1188.0)
                                            + inv2 * F::lit(-691.0 / 360360.0))))));
    let half_ln_two_pi = F::lit(0.918_938_533_204_672_8);
    (z - F::lit(0.5)) * z.ln() - z + half_ln_two_pi + series - prod.ln()
}

/// Digamma `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma<F: Scalar>(x: F) -> Result<F> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked<F: Scalar>(x: F) -> F {
    if x.is_infinite() {
        return x;
    }
    let start = F::lit(ASYMPTOTIC_START);
    let mut z = x;
    let mut shift = F::zero();
    while z < start {
        shift += z.recip();
        z += F::one();
    }
    let inv = z.recip();
    let inv2 = inv * inv;
    let series = inv2
        * (F::lit(1.0 / 12.0)
            + inv2
                * (F::lit(-1.0 / 120.0)
                    + inv2
                        * (F::lit(1.0 / 252.0)
                            + inv2
                                * (F::lit(-1.0 / 240.0)
                                    + inv2
                                        * (F::lit(1.0 / 132.0)
                                            + inv2
                                                * (F::lit(-691.0 / 32760.0)
                                                    + inv2 * F::lit(1.0 / 12.0)))))));
    z.ln() - F::lit(0.5) * inv - series - shift
}

/// `ln Σ exp(v_i)`. `-∞` entries are ignored; an empty or all `-∞` input yields `-∞`.
pub fn log_sum_exp<F: Scalar>(v: &[F]) -> F {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return F::neg_infinity();
    }
    if max == F::infinity() {
        return F::infinity();
    }
    let sum: F = v
        .iter()
        .filter(|x| **x != F::neg_infinity())
        .map(|&x| (x - max).exp())
        .sum();
    max + sum.ln()
}

/// `KL(q || p)` between diagonal Gaussians.
pub fn kl_diag_gaussian<F: Scalar>(q: &DiagGaussian<F>, p: &DiagGaussian<F>) -> Result<F> {
    if q.dim() != p.dim() {
        return Err(Error::dim("kl_diag_gaussian", q.dim(), p.dim()));
    }
    Ok(kl_diag_slices(q.mean(), q.var(), p.mean(), p.var()))
}

pub(crate) fn kl_diag_slices<F: Scalar>(mq: &[F], vq: &[F], mp: &[F], vp: &[F]) -> F {
    let half = F::lit(0.5);
    let mut kl = F::zero();
    for j in 0..mq.len() {
        let d = mq[j] - mp[j];
        kl += half * ((vp[j] / vq[j]).ln() + (vq[j] + d * d) / vp[j] - F::one());
    }
    kl
}

/// `KL(Beta(q) || Beta(p))`.
pub fn kl_beta<F: Scalar>(q: &BetaParams<F>, p: &BetaParams<F>) -> Result<F> {
    for v in [q.a, q.b, p.a, p.b] {
        check_positive("kl_beta", v)?;
    }
    Ok(kl_beta_unchecked(q.a, q.b, p.a, p.b))
}

pub(crate) fn kl_beta_unchecked<F: Scalar>(qa: F, qb: F, pa: F, pb: F) -> F {
    let ln_beta = |a: F, b: F| ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b);
    let dg_sum = digamma_unchecked(qa + qb);
    let kl = ln_beta(pa, pb) - ln_beta(qa, qb)
        + (qa - pa) * digamma_unchecked(qa)
        + (qb - pb) * digamma_unchecked(qb)
        + (pa - qa + pb - qb) * dg_sum;
    // Rounding can leave a tiny negative value when q == p.
    kl.max(F::zero())
}

/// Differential entropy of `N(·, diag(var))`.
pub fn gaussian_entropy_diag<F: Scalar>(var: &[F]) -> Result<F> {
    for &v in var {
        check_positive("gaussian_entropy_diag", v)?;
    }
    Ok(entropy_unchecked(var))
}

pub(crate) fn entropy_unchecked<F: Scalar>(var: &[F]) -> F {
    let half = F::lit(0.5);
    let per_dim = half * (F::one() + F::lit(std::f64::consts::TAU.ln()));
    let log_det: F = var.iter().map(|v| v.ln()).sum();
    per_dim * F::from_usize_lossy(var.len()) + half * log_det
}

/// `ln N(x; g.mean, diag(g.var))`.
pub fn gaussian_log_pdf_diag<F: Scalar>(x: &[F], g: &DiagGaussian<F>) -> Result<F> {
    if x.len() != g.dim() {
        return Err(Error::dim("gaussian_log_pdf_diag", g.dim(), x.len()));
    }
    Ok(log_pdf_unchecked(x, g.mean(), g.var()))
}

pub(crate) fn log_pdf_unchecked<F: Scalar>(x: &[F], mean: &[F], var: &[F]) -> F {
    let half = F::lit(0.5);
    let ln_two_pi = F::lit(std::f64::consts::TAU.ln());
    let mut lp = F::zero();
    for j in 0..x.len() {
        let d = x[j] - mean[j];
        lp -= half * (ln_two_pi + var[j].ln()) + d * d / (F::lit(2.0) * var[j]);
    }
    lp
}

/// `E_q[ln π_t]` under the truncated stick posterior (0-based `t`).
pub fn expected_log_pi<F: Scalar>(gamma: &StickPosterior<F>, t: usize) -> Result<F> {
    let truncation = gamma.truncation();
    if t >= truncation {
        return Err(Error::Index {
            context: "expected_log_pi",
            index: t,
            len: truncation,
        });
    }
    Ok(expected_log_pi_all(gamma)[t])
}

/// `E_q[ln π_t]` for every `t`, in one pass over the sticks.
pub fn expected_log_pi_all<F: Scalar>(gamma: &StickPosterior<F>) -> Vec<F> {
    let truncation = gamma.truncation();
    let mut out = Vec::with_capacity(truncation);
    let mut tail = F::zero();
    for (&g1, &g2) in gamma.gamma1().iter().zip(gamma.gamma2()) {
        let dg_sum = digamma_unchecked(g1 + g2);
        out.push(digamma_unchecked(g1) - dg_sum + tail);
        tail += digamma_unchecked(g2) - dg_sum;
    }
    // β_T ≡ 1: only the product of the preceding (1 - β_l) remains.
    out.push(tail);
    out
}

/// `E_q[π_t]` as moment products `E[β_t] ∏_{l<t} E[1 - β_l]`, with `β_T ≡ 1`.
pub fn expected_stick_weights<F: Scalar>(gamma: &StickPosterior<F>) -> Vec<F> {
    let mut out = Vec::with_capacity(gamma.truncation());
    let mut remaining = F::one();
    for (&g1, &g2) in gamma.gamma1().iter().zip(gamma.gamma2()) {
        let mean = g1 / (g1 + g2);
        out.push(remaining * mean);
        remaining *= g2 / (g1 + g2);
    }
    out.push(remaining);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Euler-Maclaurin estimate of the Euler-Mascheroni constant, H_n - ln n
    // with the first correction terms, independent of `digamma`.
    fn euler_mascheroni_oracle() -> f64 {
        let n = 1000.0_f64;
        let harmonic: f64 = (1..=1000).rev().map(|k| 1.0 / k as f64).sum();
        harmonic - n.ln() - 1.0 / (2.0 * n) + 1.0 / (12.0 * n * n) - 1.0 / (120.0 * n.powi(4))
    }

    #[test]
    fn ln_gamma_known_points() {
        assert_abs_diff_eq!(ln_gamma(1.0_f64).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(2.0_f64).unwrap(), 0.0, epsilon = 1e-14);
        // Reflection: Γ(1/2)^2 = π / sin(π/2).
        let oracle = 0.5 * std::f64::consts::PI.ln();
        assert_abs_diff_eq!(ln_gamma(0.5_f64).unwrap(), oracle, epsilon = 1e-13);
    }

    #[test]
    fn ln_gamma_against_factorials() {
        let mut ln_fact = 0.0_f64;
        for n in 1..60 {
            // ln Γ(n + 1) = ln n!
            ln_fact += (n as f64).ln();
            let got = ln_gamma((n + 1) as f64).unwrap();
            assert!((got - ln_fact).abs() <= 1e-12 * ln_fact.max(1.0), "n = {n}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(ln_gamma(0.0_f64).is_err());
        assert!(ln_gamma(-1.5_f64).is_err());
        assert!(digamma(0.0_f64).is_err());
        assert!(digamma(f64::NAN).is_err());
        assert!(gaussian_entropy_diag(&[1.0, 0.0_f64]).is_err());
        let one = BetaParams::new(1.0, 1.0).unwrap();
        let bad = BetaParams { a: -1.0, b: 1.0 };
        assert!(kl_beta(&one, &bad).is_err());
        assert!(BetaParams::new(0.0, 1.0_f64).is_err());
    }

    #[test]
    fn digamma_known_points() {
        assert_abs_diff_eq!(digamma(1.0_f64).unwrap(), -euler_mascheroni_oracle(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            digamma(2.0_f64).unwrap() - digamma(1.0_f64).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // Asymptotic expansion evaluated directly at 1000.
        let x = 1000.0_f64;
        let oracle = x.ln() - 1.0 / (2.0 * x) - 1.0 / (12.0 * x * x) + 1.0 / (120.0 * x.powi(4));
        assert_abs_diff_eq!(digamma(x).unwrap(), oracle, epsilon = 1e-13);
    }

    #[test]
    fn digamma_recurrence() {
        for x in [0.01, 0.1, 1.0, 10.0, 1000.0_f64] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() <= 1e-9, "x = {x}");
        }
    }

    #[test]
    fn log_sum_exp_cases() {
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0_f64]), 2.0_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0_f64]), 1000.0 + 2.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 3.0_f64.ln()]), 4.0_f64.ln(), epsilon = 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0, epsilon = 0.0);
    }

    #[test]
    fn kl_diag_examples() {
        let std3 = DiagGaussian::<f64>::standard(3);
        assert_abs_diff_eq!(kl_diag_gaussian(&std3, &std3).unwrap(), 0.0, epsilon = 1e-12);
        let q = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let p = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(kl_diag_gaussian(&q, &p).unwrap(), 0.5, epsilon = 1e-15);
        let q = DiagGaussian::new(vec![0.0], vec![2.0]).unwrap();
        let expected = 0.5 * (2.0 - 1.0 - 2.0_f64.ln());
        assert_abs_diff_eq!(kl_diag_gaussian(&q, &p).unwrap(), expected, epsilon = 1e-15);
        assert!(kl_diag_gaussian(&q, &std3).is_err());
    }

    #[test]
    fn entropy_examples() {
        let base = 0.5 * (1.0 + std::f64::consts::TAU.ln());
        assert_abs_diff_eq!(gaussian_entropy_diag(&[1.0]).unwrap(), base, epsilon = 1e-15);
        let e2 = std::f64::consts::E.powi(2);
        assert_abs_diff_eq!(gaussian_entropy_diag(&[e2]).unwrap(), base + 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            gaussian_entropy_diag(&[0.25, 4.0]).unwrap(),
            gaussian_entropy_diag(&[1.0, 1.0]).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_pdf_examples() {
        let ln_two_pi = std::f64::consts::TAU.ln();
        let g = DiagGaussian::new(vec![0.3, -1.0, 2.0], vec![1.0; 3]).unwrap();
        assert_abs_diff_eq!(
            gaussian_log_pdf_diag(&[0.3, -1.0, 2.0], &g).unwrap(),
            -1.5 * ln_two_pi,
            epsilon = 1e-14
        );
        let g = DiagGaussian::new(vec![0.7], vec![1.0]).unwrap();
        assert_abs_diff_eq!(
            gaussian_log_pdf_diag(&[1.7], &g).unwrap(),
            -0.5 * ln_two_pi - 0.5,
            epsilon = 1e-14
        );
        assert!(gaussian_log_pdf_diag(&[1.0, 2.0], &g).is_err());
    }

    #[test]
    fn log_pdf_matches_product_of_univariate_densities() {
        let mean: [f64; 5] = [0.1, -0.4, 1.3, 2.2, -3.0];
        let var: [f64; 5] = [0.5, 1.7, 0.09, 2.5, 1.0];
        let x: [f64; 5] = [0.0, 0.3, 1.0, 4.0, -2.2];
        let g = DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap();
        let product: f64 = (0..5)
            .map(|j| {
                let z = (x[j] - mean[j]) / var[j].sqrt();
                (-0.5 * z * z).exp() / (std::f64::consts::TAU * var[j]).sqrt()
            })
            .product();
        assert_abs_diff_eq!(gaussian_log_pdf_diag(&x, &g).unwrap(), product.ln(), epsilon = 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        assert!((ln_gamma(0.5_f32).unwrap() - 0.572_364_9).abs() < 1e-5);
        assert!((digamma(1.0_f32).unwrap() + 0.577_215_7).abs() < 1e-5);
        let v = log_sum_exp(&[0.0_f32, 0.0]);
        assert!((v - 2.0_f32.ln()).abs() < 1e-6);
    }
}
