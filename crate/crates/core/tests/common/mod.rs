#![allow(dead_code)]

use dpdlgmm::engine::{InferenceNets, Responsibilities, VariationalState};
use dpdlgmm::model::{Architecture, EmissionKind, GenerativeParams};
use dpdlgmm::rng::{seeded, std_normal, EngineRng};
use rand::Rng;

pub struct Instance {
    pub x: Vec<Vec<f64>>,
    pub theta: GenerativeParams<f64>,
    pub state: VariationalState<f64>,
    pub rng: EngineRng,
}

pub fn arch(latent: &[usize], hidden: &[usize], emission: EmissionKind) -> Architecture {
    Architecture {
        latent_dims: latent.to_vec(),
        hidden: hidden.to_vec(),
        emission,
    }
}

/// Random model, random soft responsibilities, random top priors and data.
pub fn random_instance(seed: u64, n: usize, data_dim: usize, t: usize, arch: &Architecture) -> Instance {
    let mut rng = seeded(seed);
    let mut theta = GenerativeParams::init(data_dim, arch, t, &mut rng).unwrap();
    let nets = InferenceNets::init(data_dim, arch, t, &mut rng).unwrap();
    let top = *arch.latent_dims.last().unwrap();
    for k in 0..t {
        let m: Vec<f64> = (0..top).map(|_| std_normal(&mut rng)).collect();
        let v: Vec<f64> = (0..top).map(|_| rng.random_range(0.3..2.0)).collect();
        theta.set_top_prior(k, m, v).unwrap();
    }
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..data_dim)
                .map(|_| match arch.emission {
                    EmissionKind::Gaussian => std_normal(&mut rng),
                    EmissionKind::Bernoulli => f64::from(u8::from(rng.random_bool(0.5))),
                })
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..t).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect();
    let phi = Responsibilities::from_rows(&rows).unwrap();
    let state = VariationalState::new(phi, nets, 1.0).unwrap();
    Instance { x, theta, state, rng }
}

/// `|a - b| <= max(rel · max(|a|, |b|), abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}
