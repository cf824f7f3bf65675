#![allow(clippy::needless_range_loop)]

use dpdlgmm::model::{
    joint_log_prob, joint_log_prob_terms, sample_cluster, sample_generative, sample_prior_sticks,
    stick_breaking, Architecture, ClusterParams, Emission, EmissionKind, GenerativeParams,
    StickWeights,
};
use dpdlgmm::nn::{sigmoid, Activation, DenseLayer, GaussianHead, Mlp, Parameterized};
use dpdlgmm::rng::{seeded, std_normal};
use rand::Rng;

fn ln_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * (std::f64::consts::TAU * v).ln() - (x - m).powi(2) / (2.0 * v)
}

fn identity_layer(dim: usize) -> DenseLayer<f64> {
    let mut w = vec![0.0; dim * dim];
    for i in 0..dim {
        w[i * dim + i] = 1.0;
    }
    DenseLayer::new(w, vec![0.0; dim], dim, dim, Activation::Identity).unwrap()
}

/// Single latent layer, emission mean equal to `h`, emission variance at the floor.
fn identity_emission_model(means: &[Vec<f64>], top_var: f64) -> GenerativeParams<f64> {
    let dim = means[0].len();
    let clusters = means
        .iter()
        .map(|m| {
            let raw = DenseLayer::new(vec![0.0; dim * dim], vec![-1e4; dim], dim, dim, Activation::Identity).unwrap();
            let head = GaussianHead::new(Mlp::new(dim, vec![]).unwrap(), identity_layer(dim), raw).unwrap();
            ClusterParams::new(m.clone(), vec![top_var; dim], vec![], vec![], Emission::Gaussian(head)).unwrap()
        })
        .collect();
    GenerativeParams::new(clusters).unwrap()
}

#[test]
fn uniform_sticks_pass_ks_test() {
    let mut rng = seeded(30);
    let n = 10_000;
    let mut draws = sample_prior_sticks(1.0f64, n + 1, &mut rng).unwrap();
    draws.pop();
    draws.sort_by(f64::total_cmp);
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n as f64 - u).max(u - i as f64 / n as f64))
        .fold(0.0, f64::max);
    // 5% critical value of the one-sample Kolmogorov statistic.
    assert!(d < 1.358 / (n as f64).sqrt(), "D = {d}");
}

#[test]
fn beta_one_two_mean() {
    let mut rng = seeded(31);
    let n = 100_000;
    let mut draws = sample_prior_sticks(2.0f64, n + 1, &mut rng).unwrap();
    draws.pop();
    let mean = draws.iter().sum::<f64>() / n as f64;
    // Var of Beta(1, 2) is 1/18.
    let se = (1.0 / 18.0 / n as f64).sqrt();
    assert!((mean - 1.0 / 3.0).abs() <= 3.0 * se, "{mean}");
}

#[test]
fn strong_concentration_gives_tiny_sticks() {
    let mut rng = seeded(32);
    let draws = sample_prior_sticks(1e6f64, 1000, &mut rng).unwrap();
    let mean = draws[..999].iter().sum::<f64>() / 999.0;
    assert!((mean - 1.0 / (1.0 + 1e6)).abs() < 1e-6);
    assert_eq!(draws[999], 1.0);
}

#[test]
fn stick_breaking_is_a_probability_vector() {
    let mut rng = seeded(33);
    for _ in 0..500 {
        let t = rng.random_range(1..30);
        let mut beta: Vec<f64> = (0..t - 1).map(|_| rng.random()).collect();
        if rng.random_bool(0.2) && t > 1 {
            let k = rng.random_range(0..t - 1);
            beta[k] = if rng.random() { 0.0 } else { 1.0 };
        }
        beta.push(1.0);
        let pi = stick_breaking(&beta).unwrap();
        assert!(pi.as_slice().iter().all(|&p| p >= 0.0));
        let sum: f64 = pi.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "{sum}");
    }
}

#[test]
fn sample_mean_matches_top_mean() {
    let means = vec![vec![1.5, -2.0, 0.5], vec![-4.0, 3.0, 0.0]];
    let theta = identity_emission_model(&means, 1.0);
    let mut rng = seeded(34);
    let n = 10_000;
    for (t, m) in means.iter().enumerate() {
        let pi = StickWeights::one_hot(2, t).unwrap();
        let s = sample_generative(&theta, &pi, n, &mut rng).unwrap();
        assert!(s.z.iter().all(|&z| z == t));
        let se = ((1.0 + 1e-6) / n as f64).sqrt();
        for j in 0..3 {
            let mean = s.x.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            assert!((mean - m[j]).abs() <= 3.0 * se, "cluster {t} dim {j}: {mean}");
        }
    }
}

#[test]
fn mixture_frequencies_follow_weights() {
    let means = vec![vec![0.0], vec![5.0], vec![10.0]];
    let theta = identity_emission_model(&means, 1.0);
    let pi = stick_breaking(&[0.5, 0.5, 1.0]).unwrap();
    let mut rng = seeded(35);
    let n = 20_000;
    let s = sample_generative(&theta, &pi, n, &mut rng).unwrap();
    for (t, &p) in [0.5, 0.25, 0.25].iter().enumerate() {
        let freq = s.z.iter().filter(|&&z| z == t).count() as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 4.0 * se, "cluster {t}: {freq}");
    }
    let wrong = StickWeights::one_hot(2, 0).unwrap();
    assert!(sample_generative(&theta, &wrong, 1, &mut rng).is_err());
}

#[test]
fn noise_free_chain_is_deterministic_in_the_cluster() {
    let mut rng = seeded(36);
    let arch = Architecture {
        latent_dims: vec![2, 2],
        hidden: vec![4],
        emission: EmissionKind::Gaussian,
    };
    let mut theta = GenerativeParams::<f64>::init(3, &arch, 2, &mut rng).unwrap();
    for (t, c) in theta.clusters_mut().iter_mut().enumerate() {
        c.top_mean = vec![t as f64 * 3.0, -1.0];
        c.top_var = vec![1e-300; 2];
        for raw in c.noise_raw_mut() {
            raw.iter_mut().for_each(|r| *r = -1e4);
        }
        if let Emission::Gaussian(h) = c.emission_mut() {
            h.raw_var_layer_mut().bias_mut().iter_mut().for_each(|b| *b = -1e4);
            h.raw_var_layer_mut().weights_mut().iter_mut().for_each(|w| *w = 0.0);
        }
    }
    for t in 0..2 {
        let c = theta.cluster(t).unwrap();
        let (h1, _) = c.layer_maps()[0].forward(&c.top_mean).unwrap();
        let expected = c.emission().mean(&h1).unwrap();
        for seed in 0..5 {
            let (x, _) = sample_cluster(&theta, t, &mut seeded(100 + seed)).unwrap();
            // Only the 1e-6 variance floor perturbs the chain.
            for (a, b) in x.iter().zip(&expected) {
                assert!((a - b).abs() < 0.05, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn joint_at_the_mode() {
    let means = vec![vec![0.3, -0.7]];
    let theta = identity_emission_model(&means, 2.0);
    let h = vec![means[0].clone()];
    let value = joint_log_prob(&theta, &means[0], &h, 0).unwrap();
    let expected = 2.0 * ln_normal(0.0, 0.0, 2.0) + 2.0 * ln_normal(0.0, 0.0, 1e-6);
    assert!((value - expected).abs() <= 1e-10 * expected.abs());
}

#[test]
fn bernoulli_emission_with_zero_logits() {
    let emission = Mlp::new(2, vec![DenseLayer::<f64>::zeros(2, 5, Activation::Identity)]).unwrap();
    let c = ClusterParams::new(vec![0.0; 2], vec![1.0; 2], vec![], vec![], Emission::Bernoulli(emission)).unwrap();
    let theta = GenerativeParams::new(vec![c]).unwrap();
    let x = [1.0, 0.0, 0.0, 1.0, 1.0];
    let terms = joint_log_prob_terms(&theta, &x, &[vec![0.4, 0.1]], 0).unwrap();
    assert!((terms.emission + 5.0 * std::f64::consts::LN_2).abs() <= 1e-14);
}

/// Sum of the three factors computed without the model's own scoring path.
fn monolithic(theta: &GenerativeParams<f64>, x: &[f64], h: &[Vec<f64>], t: usize) -> f64 {
    let c = theta.cluster(t).unwrap();
    let depth = h.len();
    let mut total = 0.0;
    for j in 0..h[depth - 1].len() {
        total += ln_normal(h[depth - 1][j], c.top_mean[j], c.top_var[j]);
    }
    for l in 0..depth - 1 {
        let (f, _) = c.layer_maps()[l].forward(&h[l + 1]).unwrap();
        for j in 0..f.len() {
            let s = (1.0 + c.noise_raw()[l][j].exp()).ln();
            total += ln_normal(h[l][j], f[j], (s * s).max(1e-6));
        }
    }
    match c.emission() {
        Emission::Gaussian(head) => {
            let (g, _) = head.head_forward(&h[0]).unwrap();
            for j in 0..x.len() {
                total += ln_normal(x[j], g.mean()[j], g.var()[j]);
            }
        }
        Emission::Bernoulli(net) => {
            let (logits, _) = net.forward(&h[0]).unwrap();
            for j in 0..x.len() {
                let p = sigmoid(logits[j]);
                total += x[j] * p.ln() + (1.0 - x[j]) * (1.0 - p).ln();
            }
        }
    }
    total
}

#[test]
fn joint_matches_monolithic_evaluation() {
    let mut rng = seeded(37);
    for case in 0..20 {
        let emission = if case % 2 == 0 { EmissionKind::Gaussian } else { EmissionKind::Bernoulli };
        let arch = Architecture {
            latent_dims: vec![3, 2, 2],
            hidden: vec![5],
            emission,
        };
        let mut theta = GenerativeParams::<f64>::init(4, &arch, 3, &mut rng).unwrap();
        for c in theta.clusters_mut() {
            for t in c.tensors_mut() {
                t.iter_mut().for_each(|v| *v += 0.2 * std_normal::<f64, _>(&mut rng));
            }
            c.top_mean = vec![std_normal(&mut rng), std_normal(&mut rng)];
            c.top_var = vec![rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
        }
        let t = rng.random_range(0..3);
        let (mut x, h) = sample_cluster(&theta, t, &mut rng).unwrap();
        if emission == EmissionKind::Gaussian {
            x.iter_mut().for_each(|v| *v += 0.1);
        }
        let a = joint_log_prob(&theta, &x, &h, (t + 1) % 3).unwrap();
        let b = monolithic(&theta, &x, &h, (t + 1) % 3);
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "case {case}: {a} vs {b}");
    }
}

#[test]
fn joint_is_finite_for_extreme_inputs() {
    let mut rng = seeded(38);
    let arch = Architecture {
        latent_dims: vec![2, 2],
        hidden: vec![4],
        emission: EmissionKind::Gaussian,
    };
    let mut theta = GenerativeParams::<f64>::init(3, &arch, 1, &mut rng).unwrap();
    for raw in theta.clusters_mut()[0].noise_raw_mut() {
        raw.iter_mut().for_each(|r| *r = -1e3);
    }
    for scale in [1.0, 1e3, 1e6] {
        let x: Vec<f64> = (0..3).map(|_| scale * std_normal::<f64, _>(&mut rng)).collect();
        let h: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..2).map(|_| scale * std_normal::<f64, _>(&mut rng)).collect())
            .collect();
        assert!(joint_log_prob(&theta, &x, &h, 0).unwrap().is_finite());
    }
}

#[test]
fn samples_score_higher_under_their_own_cluster() {
    let mut rng = seeded(39);
    let arch = Architecture {
        latent_dims: vec![2, 2],
        hidden: vec![8],
        emission: EmissionKind::Gaussian,
    };
    let mut theta = GenerativeParams::<f64>::init(5, &arch, 2, &mut rng).unwrap();
    theta.set_top_prior(0, vec![10.0, 10.0], vec![1.0, 1.0]).unwrap();
    theta.set_top_prior(1, vec![-10.0, -10.0], vec![1.0, 1.0]).unwrap();
    let pi = StickWeights::one_hot(2, 0).unwrap();
    let s = sample_generative(&theta, &pi, 500, &mut rng).unwrap();
    let (mut own, mut other) = (0.0, 0.0);
    for (x, h) in s.x.iter().zip(&s.h) {
        own += joint_log_prob(&theta, x, h, 0).unwrap();
        other += joint_log_prob(&theta, x, h, 1).unwrap();
    }
    assert!(own / 500.0 > other / 500.0 + 50.0, "{own} vs {other}");
}

#[test]
fn sampling_is_seed_deterministic() {
    let arch = Architecture::default();
    let theta = GenerativeParams::<f64>::init(4, &arch, 3, &mut seeded(40)).unwrap();
    let pi = stick_breaking(&[0.3, 0.6, 1.0]).unwrap();
    let a = sample_generative(&theta, &pi, 20, &mut seeded(41)).unwrap();
    let b = sample_generative(&theta, &pi, 20, &mut seeded(41)).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.z, b.z);
    assert_eq!(a.h, b.h);
}
