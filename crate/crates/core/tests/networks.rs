use dpdlgmm::nn::{
    sgd_step, softplus, Activation, DenseLayer, GaussianHead, GradBuffer, Mlp, Parameterized,
};
use dpdlgmm::rng::{seeded, std_normal};
use rand::Rng;

const STEP: f64 = 1e-5;

fn assert_fd(analytic: f64, fd: f64, what: &str) {
    let tol = (1e-4 * fd.abs().max(analytic.abs())).max(1e-7);
    assert!((analytic - fd).abs() <= tol, "{what}: analytic {analytic} fd {fd}");
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| std_normal(rng)).collect()
}

fn mlp_loss(net: &Mlp<f64>, x: &[f64], w: &[f64]) -> f64 {
    let (y, _) = net.forward(x).unwrap();
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut rng = seeded(20);
    for case in 0..10 {
        let in_dim = rng.random_range(1..5);
        let out_dim = rng.random_range(1..4);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
        let mut net = Mlp::<f64>::with_hidden(in_dim, &hidden, out_dim, &mut rng);
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v += 0.3 * std_normal::<f64, _>(&mut rng));
        }
        let x = random_vec(&mut rng, in_dim);
        let w = random_vec(&mut rng, out_dim);

        let (_, cache) = net.forward(&x).unwrap();
        let (grads, grad_x) = net.backward(&cache, &w).unwrap();
        assert!(grads.is_congruent(&net));

        for i in 0..net.num_params() {
            let orig = *net.flat_param_mut(i).unwrap();
            *net.flat_param_mut(i).unwrap() = orig + STEP;
            let up = mlp_loss(&net, &x, &w);
            *net.flat_param_mut(i).unwrap() = orig - STEP;
            let down = mlp_loss(&net, &x, &w);
            *net.flat_param_mut(i).unwrap() = orig;
            assert_fd(grads.flat(i).unwrap(), (up - down) / (2.0 * STEP), &format!("case {case} param {i}"));
        }
        for j in 0..in_dim {
            let mut xp = x.clone();
            xp[j] += STEP;
            let mut xm = x.clone();
            xm[j] -= STEP;
            let fd = (mlp_loss(&net, &xp, &w) - mlp_loss(&net, &xm, &w)) / (2.0 * STEP);
            assert_fd(grad_x[j], fd, &format!("case {case} input {j}"));
        }
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut rng = seeded(21);
    let net = Mlp::<f64>::with_hidden(3, &[4], 2, &mut rng);
    let (_, cache) = net.forward(&[0.1, -0.4, 2.0]).unwrap();
    let (grads, grad_x) = net.backward(&cache, &[0.0, 0.0]).unwrap();
    assert!(grads.iter_flat().all(|g| g == 0.0));
    assert!(grad_x.iter().all(|&g| g == 0.0));
    assert!(net.backward(&cache, &[1.0]).is_err());
}

fn head_loss(head: &GaussianHead<f64>, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (g, _) = head.head_forward(x).unwrap();
    g.mean()
        .iter()
        .zip(g.var())
        .zip(a.iter().zip(b))
        .map(|((m, v), (a, b))| a * m * m + b * v.ln())
        .sum()
}

#[test]
fn gaussian_head_backward_matches_finite_differences() {
    let mut rng = seeded(22);
    for case in 0..10 {
        let in_dim = rng.random_range(1..5);
        let out_dim = rng.random_range(1..4);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
        let mut head = GaussianHead::<f64>::with_hidden(in_dim, &hidden, out_dim, &mut rng);
        let x = random_vec(&mut rng, in_dim);
        let a = random_vec(&mut rng, out_dim);
        let b = random_vec(&mut rng, out_dim);

        let (g, cache) = head.head_forward(&x).unwrap();
        let grad_mean: Vec<f64> = g.mean().iter().zip(&a).map(|(m, a)| 2.0 * a * m).collect();
        let grad_var: Vec<f64> = g.var().iter().zip(&b).map(|(v, b)| b / v).collect();
        let (grads, grad_x) = head.backward(&cache, &grad_mean, &grad_var).unwrap();

        for i in 0..head.num_params() {
            let orig = *head.flat_param_mut(i).unwrap();
            *head.flat_param_mut(i).unwrap() = orig + STEP;
            let up = head_loss(&head, &x, &a, &b);
            *head.flat_param_mut(i).unwrap() = orig - STEP;
            let down = head_loss(&head, &x, &a, &b);
            *head.flat_param_mut(i).unwrap() = orig;
            assert_fd(grads.flat(i).unwrap(), (up - down) / (2.0 * STEP), &format!("case {case} param {i}"));
        }
        for j in 0..in_dim {
            let mut xp = x.clone();
            xp[j] += STEP;
            let mut xm = x.clone();
            xm[j] -= STEP;
            let fd = (head_loss(&head, &xp, &a, &b) - head_loss(&head, &xm, &a, &b)) / (2.0 * STEP);
            assert_fd(grad_x[j], fd, &format!("case {case} input {j}"));
        }
    }
}

#[test]
fn two_layer_forward_matches_explicit_evaluation() {
    let w1 = vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.75];
    let b1 = vec![0.1, -0.2, 0.3];
    let w2 = vec![1.5, -0.5, 2.0];
    let b2 = vec![-0.4];
    let net = Mlp::new(
        2,
        vec![
            DenseLayer::new(w1.clone(), b1.clone(), 2, 3, Activation::Tanh).unwrap(),
            DenseLayer::new(w2.clone(), b2.clone(), 3, 1, Activation::Identity).unwrap(),
        ],
    )
    .unwrap();
    let x = [0.7f64, -1.3];
    let hidden: Vec<f64> = (0..3)
        .map(|i| (w1[2 * i] * x[0] + w1[2 * i + 1] * x[1] + b1[i]).tanh())
        .collect();
    let expected = w2[0] * hidden[0] + w2[1] * hidden[1] + w2[2] * hidden[2] + b2[0];
    let (y, _) = net.forward(&x).unwrap();
    assert!((y[0] - expected).abs() <= 1e-14);
    assert!(net.forward(&[1.0]).is_err());
}

#[test]
fn mismatched_layers_rejected() {
    let l1 = DenseLayer::<f64>::zeros(2, 3, Activation::Tanh);
    let l2 = DenseLayer::<f64>::zeros(4, 1, Activation::Identity);
    assert!(Mlp::new(2, vec![l1, l2]).is_err());
    assert!(DenseLayer::<f64>::new(vec![0.0; 5], vec![0.0; 3], 2, 3, Activation::Tanh).is_err());
}

#[test]
fn identical_seeds_give_identical_results() {
    let run = || {
        let mut rng = seeded(23);
        let head = GaussianHead::<f64>::with_hidden(4, &[8, 8], 3, &mut rng);
        let x = random_vec(&mut rng, 4);
        let (g, cache) = head.head_forward(&x).unwrap();
        let (grads, gx) = head.backward(&cache, &[1.0, -1.0, 0.5], &[0.2, 0.3, -0.1]).unwrap();
        (g, grads, gx)
    };
    let (g1, gr1, x1) = run();
    let (g2, gr2, x2) = run();
    assert_eq!(g1, g2);
    assert_eq!(gr1, gr2);
    assert_eq!(x1, x2);
}

#[test]
fn head_variance_examples_and_floor() {
    let mut rng = seeded(24);
    let mut head = GaussianHead::<f64>::with_hidden(2, &[3], 2, &mut rng);
    let out = head.raw_var_layer_mut();
    out.weights_mut().iter_mut().for_each(|w| *w = 0.0);
    out.bias_mut().iter_mut().for_each(|b| *b = 0.0);
    let (g, _) = head.head_forward(&[0.3, 0.9]).unwrap();
    let ln2 = std::f64::consts::LN_2;
    for &v in g.var() {
        assert!((v - ln2 * ln2).abs() <= 1e-15);
    }
    head.raw_var_layer_mut().bias_mut().iter_mut().for_each(|b| *b = -1e4);
    let (g, _) = head.head_forward(&[0.3, 0.9]).unwrap();
    assert!(g.var().iter().all(|&v| v == 1e-6));

    for _ in 0..200 {
        let mut h = GaussianHead::<f64>::with_hidden(3, &[5], 4, &mut rng);
        for t in h.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= rng.random_range(0.0..40.0));
        }
        let x = random_vec(&mut rng, 3);
        let (g, _) = h.head_forward(&x).unwrap();
        assert!(g.var().iter().all(|&v| v >= 1e-6));
    }
    assert!(softplus(-800.0f64) >= 0.0);
}

#[test]
fn sgd_step_examples() {
    let mut layer = DenseLayer::<f64>::new(vec![1.0], vec![0.0], 1, 1, Activation::Identity).unwrap();
    let grads = GradBuffer {
        tensors: vec![vec![2.0], vec![0.0]],
    };
    sgd_step(&mut layer, &grads, 0.1).unwrap();
    assert!((layer.weights()[0] - 1.2).abs() <= 1e-15);

    let before = layer.clone();
    sgd_step(&mut layer, &grads, 0.0).unwrap();
    assert_eq!(layer, before);
    let zero = GradBuffer::zeros_like(&layer);
    sgd_step(&mut layer, &zero, 0.5).unwrap();
    assert_eq!(layer, before);

    let bad = GradBuffer {
        tensors: vec![vec![2.0, 1.0], vec![0.0]],
    };
    assert!(sgd_step(&mut layer, &bad, 0.1).is_err());
}
