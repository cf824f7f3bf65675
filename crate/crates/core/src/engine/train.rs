//! The outer training loop.
//!
//! Every outer iteration runs, in order: the `γ` update, the `(m, V)` update,
//! `E` epochs of gradient ascent on `(Λ, ψ)`, and the `φ` update. The ELBO is
//! then estimated with a noise seed that is fixed for the whole run, so values
//! of successive iterations are directly comparable.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::model::GenerativeParams;
use crate::rng::{seeded, EngineRng};
use crate::Scalar;

use super::closed_form::SufficientStats;
use super::estimate::{elbo, update_phi};
use super::gradient::grad_step;
use super::state::{InferenceNets, PhiInit, Responsibilities, TrainConfig, VariationalState};
use super::svi::{rho_schedule, svi_step};

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<F> {
    pub iter: usize,
    pub elbo: F,
    pub counts: Vec<F>,
    /// Wall-clock seconds since the trainer was created.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub theta: GenerativeParams<F>,
    pub state: VariationalState<F>,
    pub trace: Vec<TraceRecord<F>>,
    pub converged: bool,
}

fn euclidean<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<F>().sqrt()
}

/// Soft initial responsibilities: `T` centres picked by k-means++ seeding,
/// then a softmax over negative Euclidean distances to the centres.
///
/// With labels, the centre of cluster `t` is the mean of the rows labelled
/// `t`, and only the remaining centres are seeded. Labelled rows are clamped
/// one-hot.
pub fn init_responsibilities<F: Scalar, R: Rng + ?Sized>(
    x: &[Vec<F>],
    labels: Option<&[Option<usize>]>,
    truncation: usize,
    rng: &mut R,
) -> Result<Responsibilities<F>> {
    if x.is_empty() {
        return Err(Error::Data("no data points".into()));
    }
    let dim = x[0].len();
    let mut centres: Vec<Option<Vec<F>>> = vec![None; truncation];
    if let Some(labels) = labels {
        if labels.len() != x.len() {
            return Err(Error::dim("labels", x.len(), labels.len()));
        }
        let mut sums = vec![(vec![F::zero(); dim], 0usize); truncation];
        for (xn, y) in x.iter().zip(labels) {
            if let Some(y) = *y {
                if y >= truncation {
                    return Err(Error::Index {
                        context: "label",
                        index: y,
                        len: truncation,
                    });
                }
                sums[y].0.iter_mut().zip(xn).for_each(|(s, &v)| *s += v);
                sums[y].1 += 1;
            }
        }
        for (t, (sum, count)) in sums.into_iter().enumerate() {
            if count > 0 {
                let c = F::from_usize_lossy(count);
                centres[t] = Some(sum.into_iter().map(|s| s / c).collect());
            }
        }
    }
    let mut d2: Vec<f64> = vec![f64::INFINITY; x.len()];
    let refresh = |d2: &mut [f64], c: &[F]| {
        for (d, xn) in d2.iter_mut().zip(x) {
            *d = d.min(euclidean(xn, c).to_f64_lossy().powi(2));
        }
    };
    for c in centres.iter().flatten() {
        refresh(&mut d2, c);
    }
    for t in 0..truncation {
        if centres[t].is_some() {
            continue;
        }
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut u = rng.random::<f64>() * total;
            let mut pick = x.len() - 1;
            for (n, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = n;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..x.len())
        };
        refresh(&mut d2, &x[pick]);
        centres[t] = Some(x[pick].clone());
    }
    let centres: Vec<Vec<F>> = centres.into_iter().flatten().collect();
    let rows: Vec<Vec<F>> = x
        .iter()
        .map(|xn| {
            let neg: Vec<F> = centres.iter().map(|c| -euclidean(xn, c)).collect();
            let lse = crate::special::log_sum_exp(&neg);
            neg.iter().map(|&v| (v - lse).exp()).collect()
        })
        .collect();
    let mut phi = Responsibilities::from_rows(&rows)?;
    if let Some(labels) = labels {
        phi.clamp(labels)?;
    }
    Ok(phi)
}

/// Rows drawn from a symmetric Dirichlet with concentration `c`; labelled
/// rows are clamped one-hot.
pub fn init_responsibilities_dirichlet<F: Scalar, R: Rng + ?Sized>(
    rows: usize,
    labels: Option<&[Option<usize>]>,
    truncation: usize,
    concentration: F,
    rng: &mut R,
) -> Result<Responsibilities<F>> {
    let gamma = rand_distr::Gamma::new(concentration.to_f64_lossy(), 1.0)
        .map_err(|e| Error::Config(format!("Dirichlet concentration: {e}")))?;
    let rows: Vec<Vec<F>> = (0..rows)
        .map(|_| {
            let g: Vec<f64> = (0..truncation).map(|_| rng.sample(gamma).max(f64::MIN_POSITIVE)).collect();
            let s: f64 = g.iter().sum();
            g.iter().map(|v| F::lit(v / s)).collect()
        })
        .collect();
    let mut phi = Responsibilities::from_rows(&rows)?;
    if let Some(labels) = labels {
        phi.clamp(labels)?;
    }
    Ok(phi)
}

/// Holds the full training state so the loop can be driven step by step.
pub struct Trainer<'a, F: Scalar> {
    x: &'a [Vec<F>],
    cfg: TrainConfig<F>,
    theta: GenerativeParams<F>,
    state: VariationalState<F>,
    rng: EngineRng,
    elbo_seed: u64,
    trace: Vec<TraceRecord<F>>,
    svi_steps: usize,
    started: Instant,
    /// Seconds already spent before a resume.
    time_offset: f64,
}

impl<'a, F: Scalar> Trainer<'a, F> {
    /// Fresh model and `φ` from `cfg.seed`.
    pub fn new(x: &'a [Vec<F>], labels: Option<&[Option<usize>]>, cfg: TrainConfig<F>) -> Result<Self> {
        cfg.validate()?;
        if x.is_empty() {
            return Err(Error::Data("no data points".into()));
        }
        let data_dim = x[0].len();
        if let Some(n) = x.iter().position(|r| r.len() != data_dim) {
            return Err(Error::Data(format!("row {n} has {} columns, expected {data_dim}", x[n].len())));
        }
        if let Some(labels) = labels {
            if labels.len() != x.len() {
                return Err(Error::dim("labels", x.len(), labels.len()));
            }
        }
        let mut rng = seeded(cfg.seed);
        let theta = GenerativeParams::init(data_dim, &cfg.architecture, cfg.truncation, &mut rng)?;
        let nets = InferenceNets::init(data_dim, &cfg.architecture, cfg.truncation, &mut rng)?;
        let phi = match cfg.init {
            PhiInit::KMeansPlusPlus => init_responsibilities(x, labels, cfg.truncation, &mut rng)?,
            PhiInit::Dirichlet(c) => init_responsibilities_dirichlet(x.len(), labels, cfg.truncation, c, &mut rng)?,
        };
        let state = VariationalState::new(phi, nets, cfg.eta)?;
        let elbo_seed = rng.next_u64();
        Self::from_parts(x, cfg, theta, state, rng, elbo_seed)
    }

    /// Resumes from existing parameters and generator state.
    pub fn from_parts(
        x: &'a [Vec<F>],
        cfg: TrainConfig<F>,
        theta: GenerativeParams<F>,
        state: VariationalState<F>,
        rng: EngineRng,
        elbo_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if state.phi.rows() != x.len() {
            return Err(Error::dim("trainer rows", x.len(), state.phi.rows()));
        }
        if theta.truncation() != cfg.truncation || state.truncation() != cfg.truncation {
            return Err(Error::Config("truncation of state and config differ".into()));
        }
        Ok(Trainer {
            x,
            cfg,
            theta,
            state,
            rng,
            elbo_seed,
            trace: Vec::new(),
            svi_steps: 0,
            started: Instant::now(),
            time_offset: 0.0,
        })
    }

    pub fn theta(&self) -> &GenerativeParams<F> {
        &self.theta
    }

    pub fn state(&self) -> &VariationalState<F> {
        &self.state
    }

    pub fn rng(&self) -> &EngineRng {
        &self.rng
    }

    pub fn elbo_seed(&self) -> u64 {
        self.elbo_seed
    }

    pub fn trace(&self) -> &[TraceRecord<F>] {
        &self.trace
    }

    pub fn config(&self) -> &TrainConfig<F> {
        &self.cfg
    }

    /// Minibatch updates taken so far; drives the step-size schedule.
    pub fn svi_steps(&self) -> usize {
        self.svi_steps
    }

    /// Reinstates the trace and SVI step count of an interrupted run.
    pub fn restore_history(&mut self, trace: Vec<TraceRecord<F>>, svi_steps: usize) {
        self.time_offset = trace.last().map_or(0.0, |r| r.seconds);
        self.trace = trace;
        self.svi_steps = svi_steps;
    }

    fn all_rows(&self) -> Vec<usize> {
        (0..self.x.len()).collect()
    }

    /// Recomputes the sufficient statistics from all rows and sets `γ`.
    pub fn update_gamma(&mut self) -> Result<()> {
        let rows = self.all_rows();
        self.state.stats = SufficientStats::collect(self.x, &rows, &self.state.phi, &self.state.nets)?;
        self.state.gamma = self.state.stats.stick_posterior(self.state.eta);
        Ok(())
    }

    /// Sets `(m, V)` from the current statistics. Returns skipped clusters.
    pub fn update_top_prior(&mut self) -> Result<Vec<usize>> {
        let rows = self.all_rows();
        self.state.stats = SufficientStats::collect(self.x, &rows, &self.state.phi, &self.state.nets)?;
        let skipped = self.state.stats.top_prior().apply(&mut self.theta)?;
        if !skipped.is_empty() {
            log::debug!("clusters without mass kept their top prior: {skipped:?}");
        }
        Ok(skipped)
    }

    /// `γ` then `(m, V)` from a single pass over the data.
    pub fn closed_form_updates(&mut self) -> Result<Vec<usize>> {
        self.update_gamma()?;
        let skipped = self.state.stats.top_prior().apply(&mut self.theta)?;
        if !skipped.is_empty() {
            log::debug!("clusters without mass kept their top prior: {skipped:?}");
        }
        Ok(skipped)
    }

    /// One pass of minibatch updates of `(γ, m, V)` over shuffled rows.
    pub fn svi_pass(&mut self) -> Result<()> {
        let Some(svi) = self.cfg.svi else {
            return Err(Error::Config("no SVI schedule configured".into()));
        };
        if self.svi_steps == 0 && self.state.stats.counts.iter().all(|c| *c == F::zero()) {
            // Start the running statistics from a full pass.
            self.update_gamma()?;
        }
        let mut order = self.all_rows();
        order.shuffle(&mut self.rng);
        for batch in order.chunks(svi.batch_size.min(self.x.len())) {
            // t + τ ≥ 1 holds from the first step on.
            let rho = rho_schedule(self.svi_steps + 1, svi.tau, svi.kappa)?;
            svi_step(self.x, batch, &mut self.state, &mut self.theta, rho)?;
            self.svi_steps += 1;
        }
        Ok(())
    }

    /// `E` epochs of gradient ascent over shuffled minibatches.
    pub fn gradient_epochs(&mut self) -> Result<()> {
        let mut order = self.all_rows();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for batch in order.chunks(self.cfg.grad_batch) {
                grad_step(
                    self.x,
                    batch,
                    &mut self.state,
                    &mut self.theta,
                    self.cfg.alpha,
                    self.cfg.samples,
                    self.cfg.phi_threshold,
                    self.cfg.grad_clip,
                    &mut self.rng,
                )?;
            }
        }
        Ok(())
    }

    pub fn update_responsibilities(&mut self) -> Result<()> {
        self.state.phi = update_phi(
            self.x,
            &self.state.gamma,
            &self.state.nets,
            &self.theta,
            self.cfg.samples,
            &mut self.rng,
            &self.state.phi,
        )?;
        Ok(())
    }

    /// ELBO under the run's fixed noise seed.
    pub fn evaluate_elbo(&self) -> Result<F> {
        let mut rng = seeded(self.elbo_seed);
        let value = elbo(self.x, &self.state, &self.theta, self.cfg.samples, &mut rng)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "ELBO became {value} at iteration {}",
                self.trace.len()
            )));
        }
        Ok(value)
    }

    /// Runs one outer iteration and appends its trace record.
    pub fn outer_iteration(&mut self) -> Result<&TraceRecord<F>> {
        if self.cfg.svi.is_some() {
            self.svi_pass()?;
        } else {
            self.closed_form_updates()?;
        }
        self.gradient_epochs()?;
        self.update_responsibilities()?;
        let value = self.evaluate_elbo()?;
        let record = TraceRecord {
            iter: self.trace.len() + 1,
            elbo: value,
            counts: self.state.phi.counts(),
            seconds: self.time_offset + self.started.elapsed().as_secs_f64(),
        };
        log::info!("iteration {}: elbo {}", record.iter, record.elbo);
        self.trace.push(record);
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Whether the last two records differ by less than the relative tolerance.
    pub fn converged(&self) -> bool {
        match self.trace.as_slice() {
            [.., a, b] => {
                let scale = a.elbo.abs().max(F::lit(1e-300));
                (b.elbo - a.elbo).abs() / scale < self.cfg.elbo_rel_tol
            }
            _ => false,
        }
    }

    /// Iterates until convergence or the iteration cap.
    pub fn run(&mut self) -> Result<bool> {
        while self.trace.len() < self.cfg.max_outer_iters {
            self.outer_iteration()?;
            if self.converged() {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn into_outcome(self, converged: bool) -> TrainOutcome<F> {
        TrainOutcome {
            theta: self.theta,
            state: self.state,
            trace: self.trace,
            converged,
        }
    }

    pub fn into_parts(self) -> (GenerativeParams<F>, VariationalState<F>, EngineRng, Vec<TraceRecord<F>>) {
        (self.theta, self.state, self.rng, self.trace)
    }
}

/// Trains from scratch. `labels[n] = Some(t)` clamps row `n` to cluster `t`.
pub fn train<F: Scalar>(
    x: &[Vec<F>],
    labels: Option<&[Option<usize>]>,
    cfg: TrainConfig<F>,
) -> Result<TrainOutcome<F>> {
    let mut trainer = Trainer::new(x, labels, cfg)?;
    let converged = trainer.run()?;
    Ok(trainer.into_outcome(converged))
}
