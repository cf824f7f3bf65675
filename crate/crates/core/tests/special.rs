use approx::assert_relative_eq;
use dpdlgmm::engine::StickPosterior;
use dpdlgmm::rng::{seeded, std_normal};
use dpdlgmm::special::{
    digamma, expected_log_pi, expected_log_pi_all, expected_stick_weights, gaussian_entropy_diag,
    gaussian_log_pdf_diag, kl_beta, kl_diag_gaussian, ln_gamma, log_sum_exp, BetaParams,
    DiagGaussian,
};
use rand::Rng;

const EULER: f64 = 0.577_215_664_901_532_9;

/// Stirling series with two correction terms, accurate to f64 for x >= 1e3.
fn stirling(x: f64) -> f64 {
    (x - 0.5) * x.ln() - x + 0.5 * std::f64::consts::TAU.ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
}

#[test]
fn ln_gamma_at_the_ends_of_its_range() {
    // ln Γ(1 + z) = -γ z + Σ_k (-1)^k ζ(k) z^k / k and ln Γ(z) = ln Γ(1 + z) - ln z.
    let z = 1e-3f64;
    let pi2 = std::f64::consts::PI.powi(2);
    let zeta = [pi2 / 6.0, 1.202_056_903_159_594_3, pi2 * pi2 / 90.0, 1.036_927_755_143_37];
    let mut series = -EULER * z;
    for (i, zk) in zeta.iter().enumerate() {
        let k = i as i32 + 2;
        series += (-1f64).powi(k) * zk * z.powi(k) / k as f64;
    }
    assert_relative_eq!(ln_gamma(z).unwrap(), series - z.ln(), epsilon = 1e-10);
    for x in [1e3, 1e4] {
        assert_relative_eq!(ln_gamma(x).unwrap(), stirling(x), epsilon = 1e-10);
    }
    // Near 1e6 the value is about 1.3e7, where one ulp is about 2e-9.
    assert_relative_eq!(ln_gamma(1e6f64).unwrap(), stirling(1e6), epsilon = 0.0, max_relative = 1e-15);
}

#[test]
fn ln_gamma_reference_values() {
    // Factorials and the half-integer value sqrt(pi).
    let mut fact = 1.0f64;
    for n in 1..20 {
        assert_relative_eq!(ln_gamma(n as f64).unwrap(), fact.ln(), epsilon = 1e-12, max_relative = 1e-12);
        fact *= n as f64;
    }
    let half = 0.5 * std::f64::consts::PI.ln();
    assert_relative_eq!(ln_gamma(0.5).unwrap(), half, epsilon = 1e-13);
    assert!(ln_gamma(0.0f64).is_err());
    assert!(ln_gamma(-1.0f64).is_err());
}

#[test]
fn digamma_reference_values_and_recurrence() {
    assert_relative_eq!(digamma(1.0f64).unwrap(), -EULER, epsilon = 1e-13);
    let half = -EULER - 2.0 * std::f64::consts::LN_2;
    assert_relative_eq!(digamma(0.5f64).unwrap(), half, epsilon = 1e-13);
    for x in [0.01f64, 0.1, 1.0, 10.0, 1000.0] {
        let gap = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
        assert!(gap.abs() <= 1e-9, "x = {x}: {gap}");
    }
    assert!(digamma(0.0f64).is_err());
}

#[test]
fn digamma_matches_derivative_of_ln_gamma() {
    for x in [0.3f64, 1.7, 4.0, 12.5, 80.0] {
        let h = 1e-5 * x.max(1.0);
        let fd = (ln_gamma(x + h).unwrap() - ln_gamma(x - h).unwrap()) / (2.0 * h);
        assert_relative_eq!(digamma(x).unwrap(), fd, max_relative = 1e-7);
    }
}

#[test]
fn log_sum_exp_shift_invariance() {
    let mut rng = seeded(3);
    for _ in 0..50 {
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-30.0..30.0)).collect();
        let c = rng.random_range(-500.0..500.0);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = log_sum_exp(&v) + c;
        let b = log_sum_exp(&shifted);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
    assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    assert_relative_eq!(log_sum_exp(&[1000.0f64, 1000.0]), 1000.0 + std::f64::consts::LN_2);
}

#[test]
fn kl_diag_gaussian_zero_on_identity_and_nonnegative() {
    let mut rng = seeded(4);
    for _ in 0..100 {
        let d = rng.random_range(1..6);
        let m: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let q = DiagGaussian::new(m.clone(), v.clone()).unwrap();
        assert!(kl_diag_gaussian(&q, &q).unwrap().abs() <= 1e-12);
        let m2: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let p = DiagGaussian::new(m2, v2).unwrap();
        assert!(kl_diag_gaussian(&q, &p).unwrap() >= 0.0);
    }
    let a = DiagGaussian::<f64>::standard(2);
    let b = DiagGaussian::<f64>::standard(3);
    assert!(kl_diag_gaussian(&a, &b).is_err());
}

#[test]
fn kl_diag_gaussian_agrees_with_monte_carlo() {
    let mut rng = seeded(5);
    let draws = 1_000_000;
    for _ in 0..20 {
        let d = rng.random_range(1..4);
        let mq: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
        let vq: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
        let mp: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
        let vp: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
        let q = DiagGaussian::new(mq.clone(), vq.clone()).unwrap();
        let p = DiagGaussian::new(mp, vp).unwrap();
        let exact = kl_diag_gaussian(&q, &p).unwrap();

        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut x = vec![0.0; d];
        for _ in 0..draws {
            for j in 0..d {
                x[j] = mq[j] + vq[j].sqrt() * std_normal::<f64, _>(&mut rng);
            }
            let r = gaussian_log_pdf_diag(&x, &q).unwrap() - gaussian_log_pdf_diag(&x, &p).unwrap();
            sum += r;
            sum_sq += r * r;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / n).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "mc {mean} exact {exact} se {se}");
    }
}

/// Composite Simpson rule on `[lo, hi]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫_0^1 f(x) dx` after `x = (1 - cos θ) / 2`, which tames logarithmic endpoint singularities.
fn unit_interval(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    simpson(
        |th: f64| {
            let x = (1.0 - th.cos()) / 2.0;
            if x <= 0.0 || x >= 1.0 {
                return 0.0;
            }
            f(x) * th.sin() / 2.0
        },
        0.0,
        std::f64::consts::PI,
        n,
    )
}

fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    let ln_b = ln_gamma(a).unwrap() + ln_gamma(b).unwrap() - ln_gamma(a + b).unwrap();
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b
}

#[test]
fn kl_beta_uniform_against_linear() {
    let q = BetaParams::new(1.0f64, 1.0).unwrap();
    let p = BetaParams::new(1.0f64, 2.0).unwrap();
    let kl = kl_beta(&q, &p).unwrap();
    let quad = unit_interval(|x| -(2.0 * (1.0 - x)).ln(), 200_000);
    // Closed form of the integral: 1 - ln 2.
    assert_relative_eq!(kl, 1.0 - std::f64::consts::LN_2, epsilon = 1e-12);
    assert!((kl - quad).abs() <= 1e-8, "{kl} vs {quad}");
}

#[test]
fn kl_beta_matches_quadrature() {
    let mut rng = seeded(6);
    for _ in 0..20 {
        let (qa, qb, pa, pb) = (
            rng.random_range(1.0..6.0),
            rng.random_range(1.0..6.0),
            rng.random_range(1.0..6.0),
            rng.random_range(1.0..6.0),
        );
        let kl = kl_beta(&BetaParams::new(qa, qb).unwrap(), &BetaParams::new(pa, pb).unwrap()).unwrap();
        let quad = unit_interval(
            |x| {
                let lq = beta_ln_pdf(x, qa, qb);
                lq.exp() * (lq - beta_ln_pdf(x, pa, pb))
            },
            20_000,
        );
        assert!((kl - quad).abs() <= 1e-6, "({qa},{qb}) || ({pa},{pb}): {kl} vs {quad}");
    }
}

#[test]
fn kl_beta_nonnegative_and_zero_on_identity() {
    let mut rng = seeded(7);
    for _ in 0..100 {
        let q = BetaParams::<f64>::new(rng.random_range(0.05..20.0), rng.random_range(0.05..20.0)).unwrap();
        let p = BetaParams::new(rng.random_range(0.05..20.0), rng.random_range(0.05..20.0)).unwrap();
        assert!(kl_beta(&q, &p).unwrap() >= 0.0);
        assert!(kl_beta(&q, &q).unwrap().abs() <= 1e-12);
    }
    assert!(BetaParams::new(0.0f64, 1.0).is_err());
}

#[test]
fn entropy_and_log_pdf_examples() {
    let base = 0.5 * (1.0 + std::f64::consts::TAU.ln());
    assert_relative_eq!(gaussian_entropy_diag(&[1.0f64]).unwrap(), base, epsilon = 1e-14);
    let e2 = std::f64::consts::E.powi(2);
    assert_relative_eq!(gaussian_entropy_diag(&[e2]).unwrap(), base + 1.0, epsilon = 1e-14);
    assert_relative_eq!(gaussian_entropy_diag(&[0.25f64, 4.0]).unwrap(), 2.0 * base, epsilon = 1e-14);
    assert!(gaussian_entropy_diag(&[0.0f64]).is_err());

    let ln2pi = std::f64::consts::TAU.ln();
    let g = DiagGaussian::new(vec![0.5f64, -1.0, 2.0], vec![1.0; 3]).unwrap();
    assert_relative_eq!(gaussian_log_pdf_diag(&[0.5, -1.0, 2.0], &g).unwrap(), -1.5 * ln2pi, epsilon = 1e-14);
    let g1 = DiagGaussian::new(vec![0.3f64], vec![1.0]).unwrap();
    assert_relative_eq!(gaussian_log_pdf_diag(&[1.3], &g1).unwrap(), -0.5 * ln2pi - 0.5, epsilon = 1e-14);
    assert!(gaussian_log_pdf_diag(&[1.0, 2.0], &g1).is_err());

    // Per-coordinate pdf product.
    let mut rng = seeded(8);
    let m: Vec<f64> = (0..5).map(|_| std_normal(&mut rng)).collect();
    let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..3.0)).collect();
    let x: Vec<f64> = (0..5).map(|_| std_normal(&mut rng)).collect();
    let product: f64 = (0..5)
        .map(|j| (-(x[j] - m[j]).powi(2) / (2.0 * v[j])).exp() / (std::f64::consts::TAU * v[j]).sqrt())
        .product();
    let g = DiagGaussian::new(m, v).unwrap();
    assert_relative_eq!(gaussian_log_pdf_diag(&x, &g).unwrap(), product.ln(), epsilon = 1e-12);
}

#[test]
fn expected_log_pi_examples() {
    let single = StickPosterior::<f64>::new(vec![], vec![]).unwrap();
    assert_eq!(single.truncation(), 1);
    assert_eq!(expected_log_pi(&single, 0).unwrap(), 0.0);

    let two = StickPosterior::new(vec![1.0f64], vec![1.0]).unwrap();
    assert_relative_eq!(expected_log_pi(&two, 0).unwrap(), -1.0, epsilon = 1e-13);

    let three = StickPosterior::new(vec![1.0f64; 2], vec![1.0; 2]).unwrap();
    assert_relative_eq!(expected_log_pi(&three, 1).unwrap(), -2.0, epsilon = 1e-13);
    assert!(expected_log_pi(&three, 3).is_err());
}

#[test]
fn stick_expectations_jensen_and_normalization() {
    let mut rng = seeded(9);
    for _ in 0..200 {
        let t = rng.random_range(1..12);
        let g1: Vec<f64> = (0..t - 1).map(|_| rng.random_range(0.05..50.0)).collect();
        let g2: Vec<f64> = (0..t - 1).map(|_| rng.random_range(0.05..50.0)).collect();
        let gamma = StickPosterior::new(g1, g2).unwrap();
        let jensen: f64 = expected_log_pi_all(&gamma).iter().map(|v| v.exp()).sum();
        assert!(jensen <= 1.0 + 1e-12, "{jensen}");
        let total: f64 = expected_stick_weights(&gamma).iter().sum();
        assert!((total - 1.0).abs() <= 1e-12, "{total}");
    }
}

#[test]
fn f32_instantiation_agrees() {
    let a = digamma(2.5f32).unwrap() as f64;
    let b = digamma(2.5f64).unwrap();
    assert!((a - b).abs() < 1e-5);
    let a = ln_gamma(7.25f32).unwrap() as f64;
    assert!((a - ln_gamma(7.25f64).unwrap()).abs() < 1e-4);
}
